mod common;

use cqr_core::annotation::{render_prompt, PromptSpec, Template};

#[test]
fn renderings_match_golden_files() {
    for t in [Template::Qrecc, Template::Topiocqa] {
        let golden = std::fs::read_to_string(common::golden_path(t)).unwrap();
        assert_eq!(render_prompt(&common::placeholder_prompt(t)), golden, "{t:?}");
    }
}

#[test]
fn zero_shot_prompt_has_no_pairs() {
    let mut spec = common::placeholder_prompt(Template::Qrecc);
    spec.demonstrations.clear();
    let p = render_prompt(&spec);
    assert!(!p.contains("Bad Rewrite"));
    assert_eq!(p.matches("Context: [").count(), 1);
    assert!(p.ends_with("Good Rewrite:"));
}

#[test]
fn one_demonstration_gives_one_ordered_pair() {
    let full = common::placeholder_prompt(Template::Topiocqa);
    let spec = PromptSpec {
        demonstrations: full.demonstrations[..1].to_vec(),
        ..full
    };
    let p = render_prompt(&spec);
    assert_eq!(p.matches("Good Rewrite: ").count(), 1);
    assert_eq!(p.matches("Bad Rewrite: ").count(), 1);
    assert!(p.find("Good Rewrite: demo 1").unwrap() < p.find("Bad Rewrite: demo 1").unwrap());
}
