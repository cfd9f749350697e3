// Scratch calibration runs; not part of the shipped CLI.
use sama_core::config::ModelConfig;
use sama_core::data::{generate_synthetic, motion_intensity, spearman, SyntheticSpec};
use sama_core::graph::JointGraph;
use sama_core::network::SamaModel;
use sama_core::trainer::{
    ablation_variants, evaluate_model, linear_baseline_mpjpe, train_model,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let which = args.get(2).map(|s| s.as_str()).unwrap_or("quick");
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let clips: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);

    let train_spec = SyntheticSpec {
        n_sequences: 12,
        frames: 64,
        seed: 100,
        ..Default::default()
    };
    let val_spec = SyntheticSpec {
        n_sequences: 4,
        frames: 64,
        seed: 200,
        ..Default::default()
    };
    let train_data = generate_synthetic(&train_spec).unwrap();
    let val_data = generate_synthetic(&val_spec).unwrap();

    let base = ModelConfig {
        epochs,
        learning_rate: lr,
        clips_per_epoch: clips,
        ..Default::default()
    };
    println!("lr {lr}  clips/epoch {clips}");

    let lin = linear_baseline_mpjpe(&train_data, &val_data, base.clip_len).unwrap();
    println!("linear baseline val mpjpe: {lin:.3}");

    match which {
        "quick" => {
            let mut model = SamaModel::new(base.clone(), JointGraph::h36m_17()).unwrap();
            let t0 = std::time::Instant::now();
            let out = train_model(&mut model, &train_data, &val_data, Some(&mut |e| {
                if e.epoch % 10 == 0 || e.epoch + 1 == epochs {
                    println!(
                        "epoch {:4}  train_loss {:10.4}  val_mpjpe {:8.3}",
                        e.epoch, e.train_loss, e.eval_mpjpe
                    );
                }
            }))
            .unwrap();
            let dt = t0.elapsed().as_secs_f64();
            println!(
                "epochs {}  initial {:.3} final {:.3}  ratio {:.3}  wall {:.1}s ({:.2} s/epoch)",
                epochs,
                out.initial_loss,
                out.final_loss,
                out.final_loss / out.initial_loss,
                dt,
                dt / epochs as f64
            );
            // motion/delta correlation
            let mut rho_sum = 0.0;
            for seq in &val_data {
                let deltas = model.mean_delta_per_joint(&seq.pose2d).unwrap();
                let intensity = motion_intensity(&seq.pose2d, false);
                rho_sum += spearman(&deltas, &intensity);
            }
            println!("delta/motion spearman (val mean): {:.3}", rho_sum / val_data.len() as f64);
        }
        "ablation" => {
            for seed in [0u64, 1, 2] {
                for (name, mut cfg) in ablation_variants(&base) {
                    cfg.seed = seed;
                    let t0 = std::time::Instant::now();
                    let mut model = SamaModel::new(cfg, JointGraph::h36m_17()).unwrap();
                    let out = train_model(&mut model, &train_data, &val_data, None).unwrap();
                    let m = evaluate_model(&model, &val_data, base.clip_len).unwrap();
                    let mut rho_sum = 0.0;
                    for seq in &val_data {
                        let deltas = model.mean_delta_per_joint(&seq.pose2d).unwrap();
                        let intensity = motion_intensity(&seq.pose2d, false);
                        rho_sum += spearman(&deltas, &intensity);
                    }
                    println!(
                        "seed {seed} {name:12} val_mpjpe {:8.3}  loss {:8.3}->{:8.3}  rho {:+.3}  {:.1}s",
                        m.mpjpe,
                        out.initial_loss,
                        out.final_loss,
                        rho_sum / val_data.len() as f64,
                        t0.elapsed().as_secs_f64()
                    );
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
