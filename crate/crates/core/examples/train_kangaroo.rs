//! Train the blended agent on MiniKangaroo and evaluate it.
//!
//! `cargo run --release --example train_kangaroo -- [timesteps] [seed]`

use nsrl::assets;
use nsrl::envs::{EnvName, EnvSpec};
use nsrl::policy::{build_policy, BlenderMode};
use nsrl::train::{evaluate, TrainConfig, Trainer};

fn main() {
    let mut args = std::env::args().skip(1);
    let total_timesteps = args.next().map_or(50_000, |s| s.parse().expect("timesteps"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));

    let env_name = EnvName::MiniKangaroo;
    let spec = EnvSpec::new(env_name);
    let bundle = assets::bundle(env_name).unwrap();
    let policy = build_policy(&bundle, &spec, BlenderMode::Logic, seed).unwrap();
    let cfg = TrainConfig {
        total_timesteps,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, policy, &spec.clone().with_seed(seed)).unwrap();
    trainer
        .run(|_, m| {
            if m.iteration % 10 == 0 {
                println!("{}", serde_json::to_string(m).unwrap());
            }
            Ok(())
        })
        .unwrap();

    println!("\nlearned action rules:\n{}", trainer.policy.logic.program.rules().format());
    let s = evaluate(&trainer.policy, &spec, 20, 1000).unwrap();
    println!("eval: return {:.2} ± {:.2}, beta {:.3}", s.mean_return, s.std_return, s.beta_mean);
}
