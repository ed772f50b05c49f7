//! Temporary: print per-parameter max abs difference between two checkpoints.

use acs_core::model::TwoStreamModel;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let a = TwoStreamModel::load(std::path::Path::new(&args[1])).unwrap();
    let b = TwoStreamModel::load(std::path::Path::new(&args[2])).unwrap();
    for name in a.model_names() {
        let va = a.store.value(&name).unwrap();
        let vb = b.store.value(&name).unwrap();
        let d = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        println!("{name::<30} {d:.3e}");
    }
}
