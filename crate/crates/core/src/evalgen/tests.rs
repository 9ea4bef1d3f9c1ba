use super::oracle::oracle;
use super::*;

#[test]
fn every_family_agrees_with_its_oracle() {
    for f in Family::ALL {
        let items = generate(f, 1000, None, 123).unwrap();
        for it in &items {
            assert_eq!(oracle(f, &it.prompt).as_deref(), Some(it.gold.as_str()), "{f}: {}", it.prompt);
        }
    }
}

#[test]
fn generation_is_byte_deterministic() {
    for f in Family::ALL {
        let a = to_jsonl(&generate(f, 50, None, 7).unwrap());
        let b = to_jsonl(&generate(f, 50, None, 7).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, to_jsonl(&generate(f, 50, None, 8).unwrap()));
    }
}

#[test]
fn instance_depends_only_on_its_own_seed() {
    let all = generate(Family::HeadTail, 10, None, 100).unwrap();
    let single = generate(Family::HeadTail, 1, None, 105).unwrap();
    assert_eq!(all[5], single[0]);
}

#[test]
fn jsonl_round_trip() {
    let items = generate(Family::TwoSupportingFacts, 20, Some(1), 3).unwrap();
    assert_eq!(from_jsonl(&to_jsonl(&items)).unwrap(), items);
}

#[test]
fn prompts_hold_the_requested_number_of_demonstrations() {
    for (f, per_shot) in [(Family::ReplaceWord, 1), (Family::HeadSlicing, 1), (Family::SymbolicMapping, 2)] {
        for it in generate(f, 20, Some(3), 1).unwrap() {
            let solved = match f {
                Family::SymbolicMapping => it.prompt.matches(" Label: ").count(),
                _ => it.prompt.matches("\nOutput: ").count(),
            };
            assert_eq!(solved, 3 * per_shot);
        }
    }
    for it in generate(Family::SingleSupportingFact, 20, Some(2), 1).unwrap() {
        assert_eq!(it.prompt.matches("\nAnswer: ").count(), 2);
    }
}

#[test]
fn symbols_are_distinct_and_labels_balanced() {
    let items = generate(Family::SymbolicMapping, 1000, None, 11).unwrap();
    let mut entail = 0;
    for it in &items {
        let (y, n) = (&it.metadata["label_entailment"], &it.metadata["label_contradiction"]);
        assert_ne!(y, n);
        assert!((3..=5).contains(&y.len()) && (3..=5).contains(&n.len()));
        entail += (it.gold == *y) as usize;
    }
    // 3 sigma of Binomial(1000, 0.5).
    assert!((entail as f64 - 500.0).abs() <= 3.0 * (250.0f64).sqrt(), "{entail}");
}

#[test]
fn consistent_relabeling_keeps_gold_consistent() {
    for it in generate(Family::SymbolicMapping, 200, None, 5).unwrap() {
        let (y, n) = (&it.metadata["label_entailment"], &it.metadata["label_contradiction"]);
        let prompt = it.prompt.replace(&format!("Label: {y}"), "Label: \u{1}").replace(&format!("Label: {n}"), "Label: \u{2}");
        let prompt = prompt.replace("Label: \u{1}", "Label: <<yes>>").replace("Label: \u{2}", "Label: <<no>>");
        let want = if it.gold == *y { "<<yes>>" } else { "<<no>>" };
        assert_eq!(oracle(Family::SymbolicMapping, &prompt).as_deref(), Some(want));
    }
}

#[test]
fn constructed_cases() {
    assert_eq!(oracle(Family::Counting, "Count.\n\nInput: apple apple apple\nOutput:").unwrap(), "3");
    assert_eq!(oracle(Family::ReplaceLowercase, "Lower.\n\nInput: HeLLo WoRLD\nOutput:").unwrap(), "hello world");
    assert_eq!(oracle(Family::HeadTail, "Input: a b c d\nOutput:").unwrap(), "a d");
    assert_eq!(oracle(Family::FullRepeating, "Input: x y\nOutput:").unwrap(), "x y x y");
    assert_eq!(
        oracle(Family::SingleSupportingFact, "Mary went to the garden.\nWhere is Mary?\nAnswer:").unwrap(),
        "garden"
    );
    assert_eq!(
        oracle(
            Family::TwoSupportingFacts,
            "John took the ball. John went to the kitchen.\nWhere is the ball?\nAnswer:"
        )
        .unwrap(),
        "kitchen"
    );
}

#[test]
fn degenerate_story_shapes_answer_directly() {
    let keys = generate(Family::MultipleKeyRetrieval, 2000, None, 2).unwrap();
    let lone = keys.iter().find(|i| i.metadata["keys"] == "1" && i.metadata["distractors"] == "0").unwrap();
    let value = lone.prompt.split(" is ").nth(1).unwrap().split('.').next().unwrap();
    assert_eq!(lone.gold, value);
    let facts = generate(Family::SingleSupportingFact, 2000, None, 2).unwrap();
    let one = facts.iter().find(|i| i.metadata["facts"] == "1" && i.metadata["distractors"] == "0").unwrap();
    let loc = one.prompt.lines().next().unwrap().rsplit(' ').next().unwrap().trim_end_matches('.');
    assert_eq!(one.gold, loc);
}

#[test]
fn removing_distractors_never_changes_gold() {
    for f in [Family::MultipleKeyRetrieval, Family::SingleSupportingFact, Family::TwoSupportingFacts] {
        for it in generate(f, 500, None, 4).unwrap() {
            let mut p = it.prompt.clone();
            for d in DISTRACTORS {
                p = p.replace(&format!(" {d}"), "").replace(&format!("{d} "), "").replace(d, "");
            }
            assert_eq!(oracle(f, &p).as_deref(), Some(it.gold.as_str()));
        }
    }
}

#[test]
fn scoring_counts_exactly() {
    let items = generate(Family::Counting, 10, None, 0).unwrap();
    let golds: Vec<String> = items.iter().map(|i| i.gold.clone()).collect();
    assert_eq!(score(&items, &golds, Matching::Exact).unwrap().accuracy, 1.0);
    let wrong: Vec<String> = items.iter().map(|_| "nope".to_string()).collect();
    assert_eq!(score(&items, &wrong, Matching::Exact).unwrap().accuracy, 0.0);
    let half: Vec<String> = golds.iter().enumerate().map(|(i, g)| if i % 2 == 0 { g.clone() } else { "x".into() }).collect();
    assert_eq!(score(&items, &half, Matching::Exact).unwrap().accuracy, 0.5);
    assert!(matches!(score(&items, &golds[..3], Matching::Exact), Err(EvalError::CountMismatch { .. })));
}

#[test]
fn normalized_matching_folds_case_and_space() {
    let items = generate(Family::ReplaceLowercase, 1, None, 0).unwrap();
    let out = format!("  {}  ", items[0].gold.to_uppercase().replace(' ', "   "));
    assert_eq!(score(&items, &[out.clone()], Matching::Normalized).unwrap().accuracy, 1.0);
    assert_eq!(score(&items, &[out], Matching::Exact).unwrap().accuracy, 0.0);
}
