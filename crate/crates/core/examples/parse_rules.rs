//! Parse a typed language and a weighted rule set, then print them back.

use std::sync::Arc;

use nsrl::lang::{parse_language, parse_rules};

const LANGUAGE: &str = "
type image. type player. type ladder.
const img:image. const player:player. const ladder1:ladder. const ladder2:ladder.
pred up/1 action (image). pred right/1 action (image). pred left/1 action (image).
pred on_ladder/2 state (player,ladder). pred same_floor/2 state (player,ladder).
pred left_of/2 state (player,ladder). pred right_of/2 state (player,ladder).
";

const RULES: &str = "
% climb when standing at a ladder on this floor
0.73 up(X):-on_ladder(Player,Ladder),same_floor(Player,Ladder).
0.74 right(X):-left_of(Player,Ladder),same_floor(Player,Ladder).
0.72 left(X):-right_of(Player,Ladder),same_floor(Player,Ladder).
";

fn main() {
    let lang = Arc::new(parse_language(LANGUAGE).expect("language"));
    println!(
        "{} types, {} constants, {} predicates",
        lang.types().len(),
        lang.constants().len(),
        lang.predicates().len()
    );
    let rules = parse_rules(RULES, lang.clone()).expect("rules");
    println!("{}", rules.format());
    println!("weights {:?}", rules.weights());

    // State predicates may not appear in heads.
    match parse_rules("1.0 on_ladder(P,L):-same_floor(P,L).", lang) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}
