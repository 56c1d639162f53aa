use std::path::Path;
use std::sync::Arc;

use maptrace::apps::leakcheck;
use maptrace::codegen::compile;
use maptrace::frontend::{compile_to_ir, Rule};
use maptrace::oracle::check::differential_check;
use maptrace::oracle::diff::shadow_unreachable;
use maptrace::oracle::gen::{corpus, generate_program, leak_program, FuzzConfig};
use maptrace::vm::{Vm, VmConfig};

fn fixtures(kind: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(kind);
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn whole_default_corpus_compiles() {
    let cfg = FuzzConfig::default();
    for (i, src) in corpus(&cfg).enumerate() {
        if let Err(e) = compile(&src) {
            panic!("program {i}: {e:?}\n{src}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = FuzzConfig::default();
    for i in [0, 17, 999] {
        assert_eq!(generate_program(&cfg, i), generate_program(&cfg, i));
    }
    assert_ne!(generate_program(&cfg, 0), generate_program(&FuzzConfig { seed: 1, ..cfg.clone() }, 0));
}

#[test]
fn differential_sample() {
    let cfg = FuzzConfig { iterations: 40, ..FuzzConfig::default() };
    for (i, src) in corpus(&cfg).enumerate() {
        let v = differential_check(Arc::new(compile(&src).unwrap()), i as u64);
        assert!(v.passed() && v.finished, "program {i}: {v}");
    }
    let cfg = FuzzConfig { iterations: 20, ..FuzzConfig::union_heavy(3) };
    for (i, src) in corpus(&cfg).enumerate() {
        let v = differential_check(Arc::new(compile(&src).unwrap()), i as u64);
        assert!(v.passed(), "union program {i}: {v}");
    }
}

#[test]
fn leakcheck_agrees_with_shadow_on_sample() {
    for seed in 0..10 {
        for inject in [true, false] {
            let img = Arc::new(compile(&leak_program(seed, inject)).unwrap());
            let mut vm = Vm::new(img, VmConfig { seed, ..VmConfig::default() });
            while !vm.at_main_exit() {
                vm.step().unwrap();
            }
            let got: std::collections::BTreeSet<u32> = leakcheck(&vm, &vm.image).unwrap().chunk_ids().into_iter().collect();
            assert_eq!(got, shadow_unreachable(&vm), "seed {seed} inject {inject}");
            assert_eq!(!got.is_empty(), inject, "seed {seed}");
        }
    }
}

#[test]
fn reject_fixtures_name_their_rule() {
    let all = fixtures("reject");
    assert!(all.len() >= 30);
    for (name, src) in all {
        let want = match src.lines().next().unwrap().trim_start_matches("// expect: ") {
            "R1" => Rule::R1,
            "R2" => Rule::R2,
            "R3" => Rule::R3,
            other => panic!("{name}: {other}"),
        };
        let diags = compile_to_ir(&src).expect_err(&name);
        let rules: Vec<Rule> = diags.iter().filter_map(|d| d.rule()).collect();
        assert!(!rules.is_empty() && rules.iter().all(|r| *r == want), "{name}: {rules:?}");
    }
}

#[test]
fn accept_fixtures_run_cleanly() {
    for (name, src) in fixtures("accept") {
        let img = Arc::new(compile(&src).unwrap_or_else(|e| panic!("{name}: {e:?}")));
        for seed in 0..20 {
            let v = differential_check(img.clone(), seed);
            assert!(v.passed() && v.finished, "{name} seed {seed}: {v}");
        }
    }
}
