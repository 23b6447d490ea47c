// Full-scale rehearsal of the end-to-end acceptance scenario: 200/100
// users, 20 epochs, m=64, three channel ablations + duration sweep +
// gallery sweep on a second test-only pool.
use gazeauth::harness::*;
use gazeauth::identify::{gallery_sweep, SweepMetric};
use gazeauth::signal::{Axis, ChannelSpec, Eye};
use gazeauth::synth::{generate_dataset_in_memory, SynthConfig};
use gazeauth::training::{MinibatchSpec, TrainPlan};
use std::time::Instant;

fn main() {
    let t_all = Instant::now();
    let synth = SynthConfig { n_users: 300, master_seed: 20260809, train_fraction: 2.0 / 3.0, ..SynthConfig::default() };
    let dataset = generate_dataset_in_memory(&synth).unwrap();
    let n_train = dataset.manifest.users_in_split(gazeauth::signal::Split::Train).len();
    println!("dataset A: 300 users ({n_train} train)");

    let base = ExperimentConfig {
        minibatch: MinibatchSpec { users_per_batch: 8, samples_per_user: 8 },
        plan: TrainPlan { epochs: 20, ..TrainPlan::default() },
        seed: 31,
        ..ExperimentConfig::default()
    };
    let configs = [
        ("ov_binoc", ChannelSpec::new(vec![Eye::Left, Eye::Right], vec![Axis::Optical, Axis::Visual]).unwrap()),
        ("v_binoc", ChannelSpec::new(vec![Eye::Left, Eye::Right], vec![Axis::Visual]).unwrap()),
        ("v_mono", ChannelSpec::new(vec![Eye::Left], vec![Axis::Visual]).unwrap()),
    ];
    let mut ov_run = None;
    for (name, channels) in configs {
        let cfg = ExperimentConfig { id: name.into(), channels, ..base.clone() };
        let t0 = Instant::now();
        let run = run_experiment(&cfg, &dataset).unwrap();
        println!(
            "{name:>9}: EER {:7.4}%  IR {:6.2}%  d' {:.3}  loss {:.4}->{:.4}  [{:.0}s]",
            run.result.verification.eer_pct,
            run.result.identification.rank1_ir_pct,
            run.result.verification.d_prime,
            run.histories[0].first().map(|h| h.mean_loss).unwrap_or(0.0),
            run.histories[0].last().map(|h| h.mean_loss).unwrap_or(0.0),
            t0.elapsed().as_secs_f64()
        );
        if name == "ov_binoc" { ov_run = Some(run); }
    }
    let ov = ov_run.unwrap();

    // Duration effect with the O+V model.
    let cfg = ExperimentConfig { id: "dur".into(), ..base.clone() };
    let mut cfg_dur = cfg.clone();
    cfg_dur.model_path = None;
    let rows = sweep_duration(&[(1, 1), (4, 4)], &cfg_dur, &dataset).unwrap();
    for (ne, nv, v, _) in &rows {
        println!("duration {ne}x{nv}: EER {:.4}%", v.eer_pct);
    }

    // Gallery sweep on a fresh test-only pool with the O+V model.
    let synth_b = SynthConfig { n_users: 240, master_seed: 77007, train_fraction: 0.0, ..SynthConfig::default() };
    let dataset_b = generate_dataset_in_memory(&synth_b).unwrap();
    let eval = evaluate_centroids(&base, &dataset_b, &ov.artifact, 4, 4).unwrap();
    let pool = gazeauth::identify::EvalPool {
        users: eval.enroll.iter().filter_map(|(u, e)| eval.verify.get(u).map(|v| (u.clone(), (e.clone(), v.clone())))).collect(),
    };
    println!("pool B: {} users", pool.len());
    let sweep = gallery_sweep(&pool, &[25, 50, 100, 200], 25, 99, 1.0 / 50_000.0).unwrap();
    for row in sweep.rows.iter().filter(|r| r.metric == SweepMetric::Rank1Ir) {
        println!("gallery N={:>3}: IR p5 {:6.2} p95 {:6.2} mid {:6.2}", row.n, row.p5, row.p95, row.mid);
    }
    for row in sweep.rows.iter().filter(|r| r.metric == SweepMetric::Eer) {
        println!("gallery N={:>3}: EER p5 {:6.3} p95 {:6.3} mid {:6.3}", row.n, row.p5, row.p95, row.mid);
    }
    println!("total {:.1} min", t_all.elapsed().as_secs_f64() / 60.0);
}
