//! Evaluate one agent across environment modifications and objectness
//! noise levels.

use nsrl::assets;
use nsrl::envs::{EnvName, EnvSpec, Modifications};
use nsrl::policy::{build_policy, BlenderMode};
use nsrl::train::{evaluate, TrainConfig, Trainer};

fn main() {
    let env_name = EnvName::MiniKangaroo;
    let spec = EnvSpec::new(env_name);
    let bundle = assets::bundle(env_name).unwrap();
    let policy = build_policy(&bundle, &spec, BlenderMode::Logic, 0).unwrap();
    let cfg = TrainConfig {
        total_timesteps: 20_480,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, policy, &spec).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();

    for flags in ["", "no_enemies", "relocated_ladders", "no_enemies,relocated_ladders"] {
        for noise in [0.0, 0.1, 0.3, 0.5] {
            let mut mods = Modifications::parse_flags(flags).unwrap();
            mods.objectness_noise = noise;
            let s = evaluate(&trainer.policy, &spec.clone().with_mods(mods), 10, 0).unwrap();
            println!(
                "mods={:<30} noise={noise:.1} return {:>7.2} ± {:>6.2} length {:>6.1}",
                if flags.is_empty() { "none" } else { flags },
                s.mean_return,
                s.std_return,
                s.mean_length
            );
        }
    }
}
