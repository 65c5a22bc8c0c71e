use std::path::PathBuf;

use fairprobe::backends::{parse_ranking, ParseError};
use fairprobe::corpus::Domain;
use serde_json::Value;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/transcripts")
}

fn check(name: &str) -> Result<(), String> {
    let dir = fixture_dir();
    let text = std::fs::read_to_string(dir.join(format!("{name}.txt"))).unwrap();
    let spec: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join(format!("{name}.expected.json"))).unwrap(),
    )
    .unwrap();
    let k = spec["k"].as_u64().unwrap() as usize;
    let domain: Domain = spec["domain"].as_str().unwrap().parse().unwrap();
    let expect = &spec["expect"];
    let got = parse_ranking(&text, k, domain);
    match (
        expect.get("items"),
        expect.get("error").and_then(Value::as_str),
        got,
    ) {
        (Some(items), _, Ok(parsed)) => {
            let want: Vec<(String, String)> = items
                .as_array()
                .unwrap()
                .iter()
                .map(|p| {
                    (
                        p[0].as_str().unwrap().to_string(),
                        p[1].as_str().unwrap().to_string(),
                    )
                })
                .collect();
            let have: Vec<(String, String)> = parsed
                .iter()
                .map(|i| (i.title.clone(), i.category.clone()))
                .collect();
            if want != have {
                return Err(format!("{name}: items {have:?}, want {want:?}"));
            }
            if parsed.iter().any(|i| i.domain != domain) {
                return Err(format!("{name}: wrong domain"));
            }
            Ok(())
        }
        (_, Some("unparseable"), Err(ParseError::Unparseable)) => Ok(()),
        (_, Some("short_list"), Err(ParseError::ShortList { found, k: got_k })) => {
            let want = expect["found"].as_u64().unwrap() as usize;
            if found == want && got_k == k {
                Ok(())
            } else {
                Err(format!("{name}: short list found {found}, want {want}"))
            }
        }
        (_, _, got) => Err(format!("{name}: got {got:?}, want {expect}")),
    }
}

#[test]
fn transcripts_match_labels() {
    let mut names: Vec<String> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "txt").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    assert_eq!(names.len(), 20);
    let failures: Vec<String> = names.iter().filter_map(|n| check(n).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}
