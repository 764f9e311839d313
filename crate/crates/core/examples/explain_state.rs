//! Explain one decision: fired rules, logic attributions over objects and
//! integrated-gradient saliency over the raw grid.

use nsrl::assets;
use nsrl::envs::{Env, EnvName, EnvSpec};
use nsrl::explain::{explain_state, DEFAULT_IG_STEPS, DEFAULT_TOP_K};
use nsrl::policy::{build_policy, BlenderMode};

fn main() {
    let env_name = EnvName::MiniKangaroo;
    let spec = EnvSpec::new(env_name);
    let policy = build_policy(&assets::bundle(env_name).unwrap(), &spec, BlenderMode::Logic, 0).unwrap();
    let mut env = Env::new(spec).unwrap();
    // stand at the first ladder
    for _ in 0..12 {
        env.step(2).unwrap();
    }
    let e = explain_state(&policy, &env.observe(), DEFAULT_TOP_K, DEFAULT_IG_STEPS).unwrap();
    println!("{}", e.report);

    if let Some(dir) = std::env::args().nth(1) {
        e.write_dir(dir.as_ref()).unwrap();
        println!("wrote {dir}");
    }
}
