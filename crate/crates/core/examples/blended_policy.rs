//! One forward pass of the blended policy: logic and neural action
//! distributions, the blend weight and the hybrid value.

use nsrl::assets;
use nsrl::envs::{Env, EnvName, EnvSpec};
use nsrl::policy::{build_policy, BlenderMode};

fn main() {
    let env_name = EnvName::MiniKangaroo;
    let spec = EnvSpec::new(env_name);
    let bundle = assets::bundle(env_name).unwrap();
    let mut env = Env::new(spec.clone()).unwrap();
    let actions = env.action_names();

    for mode in [BlenderMode::Logic, BlenderMode::Neural, BlenderMode::Rigid] {
        let policy = build_policy(&bundle, &spec, mode, 0).unwrap();
        let out = policy.step(&env.observe()).unwrap();
        println!("{mode:?} blender: beta {:.4} value {:.4}", out.beta, out.value);
        println!("  {:<7} {:>7} {:>7} {:>7}", "action", "logic", "neural", "blend");
        for (i, a) in actions.iter().enumerate() {
            println!(
                "  {a:<7} {:>7.4} {:>7.4} {:>7.4}",
                out.logic_dist[i], out.neural_dist[i], out.dist[i]
            );
        }
    }

    // Walk next to the first monkey: the blending rules hand control to
    // the neural policy.
    let policy = build_policy(&bundle, &spec, BlenderMode::Logic, 0).unwrap();
    for _ in 0..12 {
        env.step(2).unwrap();
    }
    let out = policy.step(&env.observe()).unwrap();
    println!("\nnear the monkey: beta {:.4}", out.beta);
}
