//! Turn an object-centric state into probabilistic ground atoms.

use nsrl::assets;
use nsrl::envs::{Env, EnvName, EnvSpec};
use nsrl::policy::RuleProgram;
use nsrl::valuation::{POS_X, POS_Y};

fn main() {
    let env_name = EnvName::MiniKangaroo;
    let bundle = assets::bundle(env_name).unwrap();
    let program = RuleProgram::new(bundle.action_rules.clone(), &bundle.valuations, &env_name.slots()).unwrap();
    let gp = program.ground();

    let env = Env::new(EnvSpec::new(env_name)).unwrap();
    let z = env.objects();
    for (slot, row) in z.slots.iter().zip(&z.rows) {
        println!("{slot:<9} {row:?}");
    }

    let (atoms, jac) = program.encoder().encode_with_jacobian(&z);
    println!();
    for (i, v) in atoms.iter().enumerate().filter(|(_, v)| **v > 0.01) {
        println!("{:<32} {v:.4}", gp.atom_name(i));
    }

    // Sensitivity of same_floor(player,ladder1) to the player's position.
    let i = gp.find("same_floor", &["player", "ladder1"]).unwrap();
    let mut g = vec![0.0; atoms.len()];
    g[i] = 1.0;
    let dz = jac.vjp(&g);
    let p = z.row_of("player").unwrap();
    println!("\nd same_floor / d player (x, y) = ({:.4}, {:.4})", dz[p][POS_X], dz[p][POS_Y]);
}
