use rand::Rng as _;

use super::*;
use crate::backbones::BackboneKind;
use crate::rng::{self, Stream};
use crate::sweep::AggregateRow;

/// Confusion matrix `cm[true][pred]`, then per-class F1 from its row and
/// column sums.
fn f1_oracle(t: &[usize], p: &[usize], k: usize) -> f64 {
    let mut cm = vec![vec![0u64; k]; k];
    for (&a, &b) in t.iter().zip(p) {
        cm[a][b] += 1;
    }
    let mut f = Vec::new();
    for c in 0..k {
        let row: u64 = cm[c].iter().sum();
        let col: u64 = (0..k).map(|r| cm[r][c]).sum();
        if row == 0 && col == 0 {
            continue;
        }
        let prec = if col == 0 { 0.0 } else { cm[c][c] as f64 / col as f64 };
        let rec = if row == 0 { 0.0 } else { cm[c][c] as f64 / row as f64 };
        f.push(if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) });
    }
    f.iter().sum::<f64>() / f.len() as f64
}

fn acc_oracle(t: &[usize], p: &[usize]) -> f64 {
    let k = t.iter().chain(p).max().unwrap() + 1;
    let mut cm = vec![vec![0u64; k]; k];
    for (&a, &b) in t.iter().zip(p) {
        cm[a][b] += 1;
    }
    (0..k).map(|c| cm[c][c]).sum::<u64>() as f64 / t.len() as f64
}

#[test]
fn hand_cases() {
    let f = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    assert_eq!(f, (2.0 / 3.0 + 4.0 / 5.0) / 2.0);
    assert!((f - 11.0 / 15.0).abs() < 1e-15);
    assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 1], &[1, 0, 0]).unwrap(), 0.0);
    assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
    // class 2 absent from both sides is left out
    assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 1.0);
    // class 1 present but never predicted scores 0
    assert_eq!(macro_f1(&[0, 1], &[0, 0], 2).unwrap(), (2.0 / 3.0 + 0.0) / 2.0);
}

#[test]
fn errors() {
    assert!(macro_f1(&[], &[], 2).is_err());
    assert!(accuracy(&[], &[]).is_err());
    assert!(macro_f1(&[0, 1], &[0], 2).is_err());
    assert!(macro_f1(&[0, 2], &[0, 1], 2).is_err());
}

#[test]
fn metrics_match_confusion_oracle() {
    let mut r = rng::stream(7, Stream::Synthetic);
    for _ in 0..200 {
        let k = r.random_range(1..=5);
        let n = r.random_range(1..=50);
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        assert!((macro_f1(&t, &p, k).unwrap() - f1_oracle(&t, &p, k)).abs() < 1e-12);
        assert_eq!(accuracy(&t, &p).unwrap(), acc_oracle(&t, &p));
    }
}

#[test]
fn relabeling_invariance() {
    let mut r = rng::stream(8, Stream::Synthetic);
    for _ in 0..50 {
        let k = r.random_range(2..=5);
        let t: Vec<usize> = (0..30).map(|_| r.random_range(0..k)).collect();
        let p: Vec<usize> = (0..30).map(|_| r.random_range(0..k)).collect();
        let perm = rng::permutation(&mut r, k);
        let t2: Vec<usize> = t.iter().map(|&y| perm[y]).collect();
        let p2: Vec<usize> = p.iter().map(|&y| perm[y]).collect();
        let (a, b) = (macro_f1(&t, &p, k).unwrap(), macro_f1(&t2, &p2, k).unwrap());
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn symmetric_balanced_confusion_gives_equal_scores() {
    // balanced binary, one error each way
    let t = [0, 0, 0, 0, 1, 1, 1, 1];
    let p = [0, 0, 0, 1, 1, 1, 1, 0];
    assert!((macro_f1(&t, &p, 2).unwrap() - accuracy(&t, &p).unwrap()).abs() < 1e-15);
    // three classes, cyclic errors of equal size
    let t = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let p = [0, 0, 1, 1, 1, 2, 2, 2, 0];
    assert!((macro_f1(&t, &p, 3).unwrap() - accuracy(&t, &p).unwrap()).abs() < 1e-15);
}

#[test]
fn gap_arithmetic() {
    let g = domain_gap("MFD", 99.39, 72.51, ScoreScale::Percent).unwrap();
    assert_eq!(g.gap, 26.88);
    assert_eq!(domain_gap_auto("x", 50.0, 50.0).unwrap().gap, 0.0);
    assert_eq!(domain_gap("WISDM", 98.02, 48.60, ScoreScale::Percent).unwrap().gap, 49.42);
    assert_eq!(domain_gap_auto("r", 0.9939, 0.7251).unwrap().gap, 0.2688);
    assert!(domain_gap_auto("m", 0.72, 99.39).is_err());
    assert!(domain_gap("m", 120.0, 50.0, ScoreScale::Percent).is_err());
    assert!(domain_gap("m", 0.5, f64::NAN, ScoreScale::Ratio).is_err());
}

#[test]
fn published_gap_audit() {
    let a = audit_published_gaps();
    let check = |d: &str| a.iter().find(|x| x.dataset == d).unwrap().check;
    assert_eq!(check("MFD"), GapCheck::Exact);
    assert_eq!(check("WISDM"), GapCheck::Rounding);
    for d in ["UCIHAR", "HHAR", "SSC"] {
        assert_eq!(check(d), GapCheck::Inconsistent, "{d}");
    }
    let get = |d: &str| a.iter().find(|x| x.dataset == d).unwrap().recomputed_gap;
    assert_eq!(get("UCIHAR"), 34.06);
    assert_eq!(get("HHAR"), 35.48);
    assert_eq!(get("SSC"), 20.42);
    let md = render_gaps(&[]);
    for d in ["UCIHAR", "HHAR", "SSC"] {
        let line = md.lines().find(|l| l.starts_with(&format!("| {d} "))).unwrap();
        assert!(line.contains("INCONSISTENT"), "{line}");
    }
}

fn table(alg: AlgorithmId, risks: &[(RiskType, f64)]) -> BenchmarkTable {
    BenchmarkTable {
        dataset: "synthetic".into(),
        algorithm: alg,
        backbone: BackboneKind::Cnn1d,
        scenarios: vec!["0:1".into()],
        rows: risks
            .iter()
            .map(|&(risk, v)| AggregateRow {
                risk,
                per_scenario: vec![Some((v, 0.01))],
                average: Some(v),
            })
            .collect(),
    }
}

#[test]
fn render_shapes() {
    let empty = render_report(&[]);
    assert_eq!(empty.summary_csv, "Dataset,Risk,Avg/Risk\n");
    assert_eq!(empty.detail_csv, "dataset,algorithm,risk,scenario,f1_mean,f1_std\n");
    assert_eq!(empty.summary_md.lines().filter(|l| l.starts_with('|')).count(), 2);

    let one = render_report(&[table(AlgorithmId::Ddc, &[(RiskType::Src, 0.8)])]);
    let lines: Vec<&str> = one.summary_csv.lines().collect();
    assert_eq!(lines, ["Dataset,Risk,DDC,Avg/Risk", "synthetic,SRC,80.00,80.00"]);
    assert_eq!(one.detail_csv.lines().count(), 2);

    let ts = [
        table(AlgorithmId::Dann, &[(RiskType::Tgt, 0.9), (RiskType::Src, 0.7)]),
        table(AlgorithmId::Ddc, &[(RiskType::Src, 0.5)]),
    ];
    let r = render_report(&ts);
    let lines: Vec<&str> = r.summary_csv.lines().collect();
    assert_eq!(lines[0], "Dataset,Risk,DDC,DANN,Avg/Risk");
    assert_eq!(lines[1], "synthetic,SRC,50.00,70.00,60.00");
    assert_eq!(lines[2], "synthetic,TGT,-,90.00,90.00");
    assert_eq!(r, render_report(&ts));
    assert!(r.detail_md.contains("| DANN | TGT | 90.00 ± 1.00 | 90.00 |"));
}
