//! Scratch diagnosis: per-epoch attention trajectory during base training.
//!
//! Usage: trace <base_epochs> [lr] [warmup_epochs] [synth config json]

use acs_core::autodiff::{AdamConfig, Graph};
use acs_core::base::base_loss;
use acs_core::data::{Split, Stream};
use acs_core::model::{substream, ModelDims, TwoStreamModel};
use acs_core::synthetic::{generate_corpus, SnippetKind, SynthConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let epochs: usize = std::env::args().nth(1).unwrap_or("40".into()).parse().unwrap();
    let lr: f64 = std::env::args().nth(2).unwrap_or("0.002".into()).parse().unwrap();
    let warmup: usize = std::env::args().nth(3).unwrap_or("0".into()).parse().unwrap();
    let cfg: SynthConfig = match std::env::args().nth(4) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap(),
        None => SynthConfig::default(),
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let videos = corpus.loaded_videos(Split::Train);
    let kinds: Vec<Vec<SnippetKind>> = corpus
        .videos
        .iter()
        .filter(|v| v.record.split == Split::Train)
        .map(|v| {
            let mut k = vec![SnippetKind::Background; v.record.snippet_count];
            for seg in &v.segments {
                for s in seg.start..=seg.end {
                    k[s] = seg.kind;
                }
            }
            k
        })
        .collect();

    let dims = ModelDims {
        rgb_dim: cfg.feature_dim,
        flow_dim: cfg.feature_dim,
        subspace_dim: cfg.feature_dim / 4,
        num_actions: cfg.num_actions,
        use_tresm: true,
    };
    let mut model = TwoStreamModel::new(dims, 7).unwrap();
    for stream in [Stream::Rgb, Stream::Flow] {
        let name = format!("{}.att.b", model.base(stream).prefix);
        model.store.set_trainable(&name, false).unwrap();
    }
    let adam = AdamConfig::with_learning_rate(lr);
    let order_seed = substream(7, "order");
    let mut order: Vec<usize> = (0..videos.len()).collect();

    println!("ep   loss  | act_r  ctx_r  mot_r  bg_r  | act_f  ctx_f  mot_f  bg_f");
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            order_seed.wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15)),
        );
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &vi in &order {
            let video = &videos[vi];
            model.store.zero_grads();
            for stream in [Stream::Rgb, Stream::Flow] {
                let mut g = Graph::new();
                let feats = g.constant(video.features(stream).clone());
                let fwd = model.base(stream).forward(&mut g, &model.store, feats).unwrap();
                let loss = base_loss(
                    &mut g,
                    fwd.video_fg,
                    fwd.video_bg,
                    &video.record.labels,
                    cfg.num_actions,
                )
                .unwrap();
                g.backward(loss).unwrap();
                g.write_grads(&mut model.store).unwrap();
                loss_sum += g.value(loss).get(0, 0);
            }
            if epoch < warmup {
                for stream in [Stream::Rgb, Stream::Flow] {
                    let prefix = model.base(stream).prefix.clone();
                    for p in ["cls.w", "cls.b"] {
                        model
                            .store
                            .clear_grad_rows(&format!("{prefix}.{p}"), &[0])
                            .unwrap();
                    }
                }
            }
            model.store.adam_step(&adam);
        }

        // per-kind mean attention, both streams
        let mut sums = [[0.0f64; 4]; 2];
        let mut counts = [0usize; 4];
        for (video, vkinds) in videos.iter().zip(&kinds) {
            for (si, stream) in [Stream::Rgb, Stream::Flow].into_iter().enumerate() {
                let mut g = Graph::new();
                let x = g.constant(video.features(stream).clone());
                let att = model.base(stream).attention(&mut g, &model.store, x).unwrap();
                let a = g.value(att);
                for (t, &k) in vkinds.iter().enumerate() {
                    let ki = match k {
                        SnippetKind::Action => 0,
                        SnippetKind::Context => 1,
                        SnippetKind::Motion => 2,
                        SnippetKind::Background => 3,
                    };
                    sums[si][ki] += a.get(0, t);
                    if si == 0 {
                        counts[ki] += 1;
                    }
                }
            }
        }
        print!("{epoch:>3} {:>6.3} |", loss_sum / (2.0 * videos.len() as f64));
        for s in &sums {
            for (ki, v) in s.iter().enumerate() {
                print!(" {:>6.3}", v / counts[ki] as f64);
            }
            print!(" |");
        }
        println!();
    }
}
