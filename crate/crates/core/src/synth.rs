//! Generated corpora with planted vulnerable statements.
//!
//! Every function copies a caller-controlled buffer into a fixed-size stack
//! array. In vulnerable functions the copy length reaches the copy through
//! an unbounded assignment; safe functions clamp it first. The copy
//! statement is textually identical in both classes, so only its data
//! dependencies reveal the class.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FunctionSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_vulnerable: usize,
    pub n_safe: usize,
    /// Inclusive range of filler statements per function.
    pub filler: (usize, usize),
    pub seed: u64,
    /// Projects assigned round-robin.
    pub projects: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_vulnerable: 100, n_safe: 100, filler: (3, 8), seed: 0, projects: vec!["synthetic".into()] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample: FunctionSample,
    /// Vulnerable lines of `code_before`, known by construction.
    pub planted: BTreeSet<usize>,
}

const BUFS: &[&str] = &["buf", "dst", "out", "local", "tmp"];
const SRCS: &[&str] = &["src", "data", "in", "payload"];
const LENS: &[&str] = &["len", "size", "count", "nbytes"];
const NS: &[&str] = &["n", "req", "avail", "want"];
const VARS: &[&str] = &["i", "j", "k", "flags", "ret", "state", "acc", "pos"];
const CALLS: &[&str] = &["update_stats", "trace_value", "mix_state", "check_flags"];
const SIZES: &[usize] = &[16, 32, 64, 128];

struct Names {
    buf: &'static str,
    src: &'static str,
    len: &'static str,
    n: &'static str,
    size: usize,
}

fn filler(rng: &mut ChaCha8Rng, declared: &mut Vec<&'static str>, names: &Names) -> Vec<String> {
    let fresh: Vec<&'static str> = VARS.iter().copied().filter(|v| !declared.contains(v)).collect();
    if declared.is_empty() || (!fresh.is_empty() && rng.gen_bool(0.3)) {
        let v = *fresh.choose(rng).unwrap_or(&VARS[0]);
        declared.push(v);
        return vec![match rng.gen_range(0..3) {
            0 => format!("int {v} = {};", rng.gen_range(0..10)),
            1 => format!("int {v} = {} * 2;", names.n),
            _ => format!("int {v} = {}(0);", CALLS.choose(rng).expect("non-empty")),
        }];
    }
    let v = *declared.choose(rng).expect("non-empty");
    let w = *declared.choose(rng).expect("non-empty");
    match rng.gen_range(0..6) {
        0 => vec![format!("{v} = {v} + {};", rng.gen_range(1..8))],
        1 => vec![format!("{v} = {w} ^ {};", rng.gen_range(1..8))],
        2 => vec![format!("{}({v});", CALLS.choose(rng).expect("non-empty"))],
        3 => vec![format!("if ({v} > {})", rng.gen_range(0..8)), format!("    {w} = 0;")],
        4 => vec![format!("{v}++;")],
        _ => vec![format!("{v} = {}({w});", CALLS.choose(rng).expect("non-empty"))],
    }
}

fn clamp_line(rng: &mut ChaCha8Rng, names: &Names) -> String {
    let Names { buf, len, n, size, .. } = names;
    match rng.gen_range(0..3) {
        0 => format!("{len} = sizeof({buf});"),
        1 => format!("{len} = {size};"),
        _ => format!("{len} = {n} < {size} ? {n} : {size};"),
    }
}

fn render(name: &str, names: &Names, body: &[String]) -> String {
    let mut out = vec![format!("int {name}(const char *{}, int {})", names.src, names.n), "{".to_string()];
    out.extend(body.iter().map(|l| format!("    {l}")));
    out.push("}".into());
    out.join("\n")
}

fn one(rng: &mut ChaCha8Rng, idx: usize, vulnerable: bool, cfg: &SynthConfig) -> SynthSample {
    let names = Names {
        buf: BUFS.choose(rng).expect("non-empty"),
        src: SRCS.choose(rng).expect("non-empty"),
        len: LENS.choose(rng).expect("non-empty"),
        n: NS.choose(rng).expect("non-empty"),
        size: *SIZES.choose(rng).expect("non-empty"),
    };
    let mut declared = Vec::new();
    let mut chunks: Vec<Vec<String>> = Vec::new();
    let count = rng.gen_range(cfg.filler.0..=cfg.filler.1.max(cfg.filler.0));
    for _ in 0..count {
        chunks.push(filler(rng, &mut declared, &names));
    }
    // Slots: header decls, [fillers], assignment, [fillers], (clamp), [fillers], copy.
    let a = rng.gen_range(0..=chunks.len());
    let b = rng.gen_range(a..=chunks.len());
    let mut body = vec![format!("char {}[{}];", names.buf, names.size), format!("int {} = 0;", names.len)];
    let copy = format!("memcpy({}, {}, {});", names.buf, names.src, names.len);
    let clamp = clamp_line(rng, &names);
    for (i, chunk) in chunks.iter().enumerate().chain(std::iter::once((chunks.len(), &Vec::new()))) {
        if i == a {
            body.push(format!("{} = {};", names.len, names.n));
        }
        if i == b && !vulnerable {
            body.push(clamp.clone());
        }
        body.extend(chunk.iter().cloned());
    }
    let copy_at = body.len();
    body.push(copy);
    body.push("return 0;".to_string());
    let name = format!("copy_{idx:04}");
    let before = render(&name, &names, &body);
    let after = if vulnerable {
        let mut fixed = body.clone();
        fixed.insert(copy_at, clamp);
        render(&name, &names, &fixed)
    } else {
        before.clone()
    };
    let project = cfg.projects[idx % cfg.projects.len().max(1)].clone();
    let mut planted = BTreeSet::new();
    if vulnerable {
        // Header and opening brace precede the body.
        planted.insert(copy_at + 3);
    }
    SynthSample {
        sample: FunctionSample {
            id: format!("{project}-{idx:04}"),
            project,
            commit_id: format!("{:012x}", rng.gen::<u64>() & 0xffff_ffff_ffff),
            cve_id: None,
            code_before: before,
            code_after: after,
            function_vulnerable: vulnerable,
            metadata: BTreeMap::from([("generator".to_string(), "planted-copy".to_string())]),
        },
        planted,
    }
}

/// Vulnerable and safe functions interleaved in a seeded random order.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut classes: Vec<bool> = std::iter::repeat_n(true, cfg.n_vulnerable)
        .chain(std::iter::repeat_n(false, cfg.n_safe))
        .collect();
    classes.shuffle(&mut rng);
    classes.into_iter().enumerate().map(|(i, v)| one(&mut rng, i, v, cfg)).collect()
}

/// The shipped 30-function demo corpus.
pub fn demo_corpus() -> Vec<FunctionSample> {
    let cfg = SynthConfig {
        n_vulnerable: 15,
        n_safe: 15,
        filler: (2, 6),
        seed: 2022,
        projects: vec!["qemu".into(), "linux".into(), "ffmpeg".into()],
    };
    generate(&cfg).into_iter().map(|s| s.sample).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::{label_sample, DepDirection};

    #[test]
    fn planted_line_is_the_copy() {
        for s in generate(&SynthConfig { n_vulnerable: 20, n_safe: 20, seed: 4, ..Default::default() }) {
            let lines: Vec<&str> = s.sample.code_before.lines().collect();
            assert_eq!(s.planted.len(), usize::from(s.sample.function_vulnerable));
            for l in &s.planted {
                assert!(lines[l - 1].trim_start().starts_with("memcpy("), "{}", s.sample.code_before);
            }
            assert_eq!(s.sample.function_vulnerable, s.sample.code_before != s.sample.code_after);
        }
    }

    #[test]
    fn labeler_recovers_planted_lines() {
        for s in generate(&SynthConfig { n_vulnerable: 30, n_safe: 5, seed: 8, ..Default::default() }) {
            let out = label_sample(&s.sample, DepDirection::Out);
            let got: BTreeSet<usize> = out.labels.vul_lines().into_iter().collect();
            assert_eq!(got, s.planted, "{}", s.sample.code_before);
        }
    }

    #[test]
    fn copy_text_is_shared_across_classes() {
        let all = generate(&SynthConfig { n_vulnerable: 2000, n_safe: 2000, ..Default::default() });
        let copies = |vul: bool| -> BTreeSet<String> {
            all.iter()
                .filter(|s| s.sample.function_vulnerable == vul)
                .flat_map(|s| s.sample.code_before.lines().filter(|l| l.contains("memcpy")).map(|l| l.trim().to_string()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(copies(true), copies(false));
    }

    #[test]
    fn demo_has_three_projects() {
        let d = demo_corpus();
        assert_eq!(d.len(), 30);
        let projects: BTreeSet<&str> = d.iter().map(|s| s.project.as_str()).collect();
        assert_eq!(projects, BTreeSet::from(["ffmpeg", "linux", "qemu"]));
        assert_eq!(d.iter().filter(|s| s.function_vulnerable).count(), 15);
    }
}
