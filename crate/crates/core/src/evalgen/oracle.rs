use std::collections::HashMap;

use super::Family;

/// Independent rule interpreters: each reads only the prompt text.
pub fn oracle(family: Family, prompt: &str) -> Option<String> {
    let last_input = || prompt.rsplit("Input: ").next().map(|s| s.trim_end_matches("\nOutput:").to_string());
    match family {
        Family::SymbolicMapping => {
            let class = |line: &str| -> Option<bool> {
                let p = line.strip_prefix("Premise: ")?;
                let (premise, rest) = p.split_once(" Hypothesis: ")?;
                let hyp = rest.split(" Label:").next()?;
                let color = premise.split(' ').nth(3)?;
                let stated = hyp.trim_end_matches('.').rsplit(' ').next()?;
                Some(color == stated)
            };
            let mut map: HashMap<bool, String> = HashMap::new();
            let lines: Vec<&str> = prompt.lines().collect();
            for l in &lines[..lines.len() - 1] {
                if let (Some(c), Some((_, sym))) = (class(l), l.split_once(" Label: ")) {
                    map.insert(c, sym.to_string());
                }
            }
            map.get(&class(lines.last()?)?).cloned()
        }
        Family::Counting => Some(last_input()?.split_whitespace().count().to_string()),
        Family::ReplaceLowercase => Some(last_input()?.to_lowercase()),
        Family::ReplaceWord => {
            let first = prompt.lines().next()?;
            let quoted: Vec<&str> = first.split('"').collect();
            let (from, to) = (quoted.get(1)?, quoted.get(3)?);
            let q = last_input()?;
            Some(q.split(' ').map(|w| if w == *from { *to } else { w }).collect::<Vec<_>>().join(" "))
        }
        Family::HeadTail => {
            let q = last_input()?;
            let w: Vec<&str> = q.split(' ').collect();
            Some(format!("{} {}", w.first()?, w.last()?))
        }
        Family::FullRepeating => {
            let q = last_input()?;
            Some(format!("{q} {q}"))
        }
        Family::HeadSlicing => {
            let mut k = None;
            for block in prompt.split("\n\n") {
                if let Some((x, y)) = block.strip_prefix("Input: ").and_then(|b| b.split_once("\nOutput: ")) {
                    if !x.starts_with(y) || k.is_some_and(|k| k != y.len()) {
                        return None;
                    }
                    k = Some(y.len());
                }
            }
            let q = last_input()?;
            Some(q[..k?].to_string())
        }
        Family::MultipleKeyRetrieval => {
            let block = prompt.rsplit("\n\n").next()?;
            let mut lines = block.lines();
            let story = lines.next()?;
            let key = lines.next()?.strip_prefix("What is the value of ")?.trim_end_matches('?');
            let mut found = None;
            for sentence in story.split(". ") {
                if let Some(rest) = sentence.trim_end_matches('.').strip_prefix("The value of ") {
                    let (k, v) = rest.split_once(" is ")?;
                    if k == key {
                        found = Some(v.to_string());
                    }
                }
            }
            found
        }
        Family::SingleSupportingFact | Family::TwoSupportingFacts => {
            let block = prompt.rsplit("\n\n").next()?;
            let mut lines = block.lines();
            let story = lines.next()?;
            let q = lines.next()?.strip_prefix("Where is ")?.trim_end_matches('?');
            let mut room: HashMap<String, String> = HashMap::new();
            let mut holder: HashMap<String, String> = HashMap::new();
            let mut left: HashMap<String, String> = HashMap::new();
            for sentence in story.split(". ") {
                let s = sentence.trim_end_matches('.');
                let who = s.split(' ').next()?.to_string();
                let object = s.rsplit(' ').next()?.to_string();
                if s.contains(" to the ") {
                    room.insert(who, object);
                } else if [" picked up ", " took ", " grabbed "].iter().any(|v| s.contains(v)) {
                    holder.insert(object.clone(), who);
                    left.remove(&object);
                } else if [" dropped ", " put down ", " discarded "].iter().any(|v| s.contains(v)) {
                    holder.remove(&object);
                    left.insert(object, room.get(&who)?.clone());
                }
            }
            match q.strip_prefix("the ") {
                None => room.get(q).cloned(),
                Some(obj) => match holder.get(obj) {
                    Some(p) => room.get(p).cloned(),
                    None => left.get(obj).cloned(),
                },
            }
        }
    }
}
