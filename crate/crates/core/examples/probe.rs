//! Scratch diagnosis: per-kind attention statistics on a trained model.
//!
//! Usage: probe <checkpoint> [synth config json]

use acs_core::autodiff::Graph;
use acs_core::data::{Split, Stream};
use acs_core::model::TwoStreamModel;
use acs_core::synthetic::{generate_corpus, SnippetKind, SynthConfig};
use acs_core::training::partition_snippets;

fn quantiles(vals: &mut Vec<f64>) -> (f64, f64, f64) {
    vals.sort_by(f64::total_cmp);
    let q = |p: f64| vals[((vals.len() - 1) as f64 * p).round() as usize];
    (q(0.1), q(0.5), q(0.9))
}

fn main() {
    let ckpt = std::env::args().nth(1).expect("usage: probe <checkpoint> [synth.json]");
    let cfg: SynthConfig = match std::env::args().nth(2) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap(),
        None => SynthConfig::default(),
    };
    let model = TwoStreamModel::load(std::path::Path::new(&ckpt)).unwrap();
    let corpus = generate_corpus(&cfg).unwrap();

    // per planted kind: per-stream and fused attention samples
    let mut stats: std::collections::BTreeMap<&'static str, [Vec<f64>; 3]> =
        std::collections::BTreeMap::new();
    let mut partition_counts = [0usize; 4];
    let videos = corpus.loaded_videos(Split::Train);
    for (gen, video) in corpus.videos.iter().filter(|v| v.record.split == Split::Train).zip(&videos) {
        let mut atts = Vec::new();
        for stream in [Stream::Rgb, Stream::Flow] {
            let mut g = Graph::new();
            let x = g.constant(video.features(stream).clone());
            let fwd = model.base(stream).forward(&mut g, &model.store, x).unwrap();
            atts.push(g.value(fwd.attention).clone());
        }
        let p = partition_snippets(&atts[0], &atts[1], 0.2).unwrap();
        partition_counts[0] += p.action.len();
        partition_counts[1] += p.context_rgb.len();
        partition_counts[2] += p.context_flow.len();
        partition_counts[3] += p.background.len();
        for seg in &gen.segments {
            let e = stats.entry(seg.kind.name()).or_default();
            for t in seg.start..=seg.end {
                let (r, f) = (atts[0].get(0, t), atts[1].get(0, t));
                e[0].push(r);
                e[1].push(f);
                e[2].push(0.5 * r + 0.5 * f);
            }
        }
    }
    println!("kind        stream   p10    p50    p90      n");
    for (kind, samples) in &mut stats {
        let n = samples[0].len();
        for (si, name) in ["rgb", "flow", "fused"].iter().enumerate() {
            let (a, b, c) = quantiles(&mut samples[si]);
            println!("{kind:<12}{name:<7}{a:>6.3} {b:>6.3} {c:>6.3} {n:>7}");
        }
    }
    println!(
        "partition totals: action {} context_rgb {} context_flow {} background {}",
        partition_counts[0], partition_counts[1], partition_counts[2], partition_counts[3]
    );
}
