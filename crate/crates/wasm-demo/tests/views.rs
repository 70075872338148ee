use cdn_wasm_demo::{channel_masks, masking_preview, ranking_metrics};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn masks_and_attention_rows() {
    let v = parse(channel_masks("0,0,0,1,1,2,2", "0,0,0,1,1,0,0", 3));
    let chans = v["channels"].as_array().unwrap();
    assert_eq!(chans.len(), 4);
    let row = |c: usize, r: usize, key: &str| chans[c][key][r].as_array().unwrap().clone();
    let bits = |c: usize, r: usize| -> String { row(c, r, "mask").iter().map(|x| x.to_string()).collect() };
    assert_eq!(bits(0, 3), "0001100");
    assert_eq!(bits(1, 3), "1110011");
    assert_eq!(bits(2, 0), "1110011");
    assert_eq!(bits(3, 0), "0001100");
    for c in 0..4 {
        for r in 0..7 {
            let mask = row(c, r, "mask");
            let att = row(c, r, "attention");
            let sum: f64 = att.iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() < 0.01, "channel {c} row {r}: {sum}");
            for (m, a) in mask.iter().zip(&att) {
                if m.as_u64() == Some(0) {
                    assert_eq!(a.as_f64(), Some(0.0));
                }
            }
        }
    }
}

#[test]
fn single_utterance_gives_empty_rows() {
    let v = parse(channel_masks("0,0,0", "0,0,0", 1));
    let att = &v["channels"][1]["attention"];
    assert!(att.as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|x| x.as_f64() == Some(0.0)));
}

#[test]
fn metrics_and_errors() {
    let v = parse(ranking_metrics("1\t0.9\n0\t0.1\n0\t0.5\n1\t0.2\n", 2, false));
    let rows = v["rows"].as_array().unwrap();
    let r1 = rows.iter().find(|r| r["metric"] == "R_2@1").unwrap();
    assert_eq!(r1["value"].as_f64(), Some(0.5));
    assert!(parse(ranking_metrics("1\t0.9\n0\t0.1\n0\n", 2, false))["error"].is_string());
    assert!(parse(channel_masks("0,1", "0", 0))["error"].is_string());
}

#[test]
fn masking_preview_counts() {
    let text = "hello there friend\nhow are you doing today\nfine thanks and yourself\nquite well indeed";
    for level in ["subword", "whole_word", "span"] {
        let v = parse(masking_preview(text, level, 0.15, 0.2, 5));
        assert!(v["error"].is_null(), "{v}");
        let masked = v["tokens"].as_array().unwrap().iter().filter(|t| t["masked"] == true).count();
        assert_eq!(masked as u64, v["masked"].as_u64().unwrap());
        let expected: f64 = v["spans"].as_array().unwrap().iter().map(|s| s["expected"].as_f64().unwrap()).sum();
        assert!((expected - 1.0).abs() < 1e-9);
    }
    assert!(parse(masking_preview("one line", "span", 0.15, 0.2, 0))["error"].is_string());
}
