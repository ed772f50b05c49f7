//! Scratch: fused video-level p_fg for labeled vs unlabeled classes.
use acs_core::data::Split;
use acs_core::localization::forward_video;
use acs_core::model::TwoStreamModel;
use acs_core::synthetic::{generate_corpus, SynthConfig};

fn main() {
    let ckpt = std::env::args().nth(1).expect("usage: vscore <checkpoint>");
    let model = TwoStreamModel::load(std::path::Path::new(&ckpt)).unwrap();
    let corpus = generate_corpus(&SynthConfig::default()).unwrap();
    let mut lab = Vec::new();
    let mut unl = Vec::new();
    for video in corpus.loaded_videos(Split::Test) {
        let fused = forward_video(&model, &video, 0.4).unwrap();
        for c in 1..=4 {
            let v = fused.video_fg.get(c, 0);
            if video.record.labels.contains(&c) { lab.push(v) } else { unl.push(v) }
        }
    }
    let stats = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[0], v[v.len() / 2], v[v.len() - 1])
    };
    let (lmin, lmed, lmax) = stats(&mut lab);
    println!("labeled   p_fg: min {lmin:.4} med {lmed:.4} max {lmax:.4}");
    let (umin, umed, umax) = stats(&mut unl);
    println!("unlabeled p_fg: min {umin:.4} med {umed:.4} max {umax:.4}");
}
