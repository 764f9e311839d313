//! Ground a small ladder program and run differentiable forward chaining,
//! then backpropagate from one action atom to the rule weights and inputs.

use std::sync::Arc;

use nsrl::lang::{parse_language, parse_rules};
use nsrl::reason::{build_graph, default_steps, ground_program};

fn main() {
    let lang = Arc::new(
        parse_language(
            "type image. type player. type ladder.
             const img:image. const player:player. const ladder1:ladder.
             pred up/1 action (image). pred right/1 action (image). pred left/1 action (image).
             pred on_ladder/2 state (player,ladder). pred same_floor/2 state (player,ladder).
             pred left_of/2 state (player,ladder). pred right_of/2 state (player,ladder).",
        )
        .unwrap(),
    );
    let rules = parse_rules(
        "1.0 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).
         1.0 right(X):-left_of(Player,Ladder),same_floor(Player,Ladder).
         1.0 left(X):-right_of(Player,Ladder),same_floor(Player,Ladder).",
        lang,
    )
    .unwrap();
    let gp = ground_program(&rules).unwrap();
    let graph = build_graph(&gp);
    println!(
        "{} ground atoms, {} ground rules, {} nodes, {} edges",
        gp.atoms().len(),
        gp.ground_rules().len(),
        graph.node_count(),
        graph.edge_count()
    );
    for j in 0..gp.ground_rules().len() {
        println!("  {}", gp.ground_rule_text(j));
    }

    let mut x0 = vec![0.0; gp.atoms().len()];
    x0[gp.find("same_floor", &["player", "ladder1"]).unwrap()] = 0.9;
    x0[gp.find("on_ladder", &["player", "ladder1"]).unwrap()] = 0.3;
    x0[gp.find("left_of", &["player", "ladder1"]).unwrap()] = 0.8;

    let weights = rules.weights();
    let tape = graph.forward(&x0, &weights, 1, 0.01).unwrap();
    for a in ["up", "right", "left"] {
        let i = gp.find(a, &["img"]).unwrap();
        println!("{:<10} {:.4}", gp.atom_name(i), tape.output()[i]);
    }

    // d right(img) / d (weights, inputs)
    let steps = default_steps(&rules);
    let tape = graph.forward(&x0, &weights, steps, 0.01).unwrap();
    let mut g = vec![0.0; gp.atoms().len()];
    g[gp.find("right", &["img"]).unwrap()] = 1.0;
    let (gw, gx) = graph.backward(&tape, &weights, &g);
    println!("after {steps} steps: dright/dw = {gw:.4?}");
    for (i, v) in gx.iter().enumerate().filter(|(_, v)| v.abs() > 1e-9) {
        println!("  dright/d{} = {v:.4}", gp.atom_name(i));
    }
}
