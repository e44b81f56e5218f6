//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use nprompt_cli::cli::{run, Cli};
use nprompt_cli::config::ScoringBackends;
use nprompt_cli::eval::EvalReport;
use nprompt_cli::models::bundled_ngram;
use nprompt_cli::service::OptimizeRequest;
use nprompt_cli::{AppState, RecordStore};
use nprompt_core::constraint::{ConstraintAutomaton, ConstraintSpec};
use nprompt_core::decode::{decode, DecodeParams};
use nprompt_core::lm::{split_words, TokenId, Vocabulary};
use nprompt_core::pipeline::{
    build_clauses, bundled_eval_prompts, bundled_train_prompts, extract_prefix, overlap_filter, process_prompt,
    Category, CategorySelection, TokenJaccard, DEFAULT_OVERLAP_THRESHOLD, KEYWORDS_PER_CLAUSE,
};
use nprompt_core::scoring::{pick_score, preference_probability, reward, EmbeddingPair, ImageRef, Scorer, ScoringError};
use nprompt_core::{ClauseSelection, KeywordTaxonomy, PromptOptimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::ppo::{finite_difference_error, run_bandit, zero_advantage_change};
use support::{brute_force_best, naive_status, occurs, random_sequence, random_spec, random_table_lm, word_vocab};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: impl Into<String>) -> Verdict {
    if ok {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn decoder_oracle() -> Verdict {
    let start = Instant::now();
    let (mut satisfiable, mut max_beam) = (0, 0);
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let vocab = word_vocab(n);
        let order = rng.random_range(2..=3);
        let lm = random_table_lm(&mut rng, &vocab, order);
        let spec = random_spec(&mut rng, n, 3, 3, 0.2);
        let prefix: Vec<TokenId> = (0..rng.random_range(0..=2))
            .map(|_| vocab.lookup(&format!("w{}", rng.random_range(0..n))))
            .collect();
        let max_new_tokens = rng.random_range(1..=5);
        // every partial hypothesis fits: n words plus EOS at each step
        let params = DecodeParams {
            beam_size: (n + 1).pow(max_new_tokens as u32),
            top_k: vocab.len(),
            max_new_tokens,
            length_penalty: [0.0, 1.0, 0.5][rng.random_range(0..3)],
            satisfaction_weight: [0.0, 0.25, 1.0][rng.random_range(0..3)],
            seed,
        };
        max_beam = max_beam.max(params.beam_size);
        let a = ConstraintAutomaton::compile(&spec, &vocab).map_err(|e| format!("seed {seed}: {e}"))?;
        let got = decode(&lm, &prefix, &a, params.clone());
        let want = brute_force_best(&lm, &prefix, &spec, &params);
        match (got, want) {
            (Ok(out), Some(best)) => {
                let top = out.best();
                if top.continuation() != best.continuation.as_slice()
                    || top.log_prob.to_bits() != best.log_prob.to_bits()
                    || top.satisfied != best.satisfied
                {
                    return Err(format!(
                        "seed {seed}: decoder {:?} ({}) vs oracle {:?} ({})",
                        top.continuation(),
                        top.log_prob,
                        best.continuation,
                        best.log_prob
                    ));
                }
                satisfiable += usize::from(best.satisfied);
            }
            (Err(_), None) => {}
            (got, want) => {
                return Err(format!(
                    "seed {seed}: decoder {:?} vs oracle {:?}",
                    got.map(|o| o.best().continuation().to_vec()),
                    want.map(|w| w.continuation)
                ))
            }
        }
    }
    let t = start.elapsed();
    check(
        t < Duration::from_secs(60),
        format!("200/200 match ({satisfiable} satisfied, beam up to {max_beam}) in {:.1}s", t.as_secs_f64()),
    )
}

fn constraint_semantics() -> Verdict {
    let (mut violated, mut decoded) = (0, 0);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 + (seed % 14) as usize;
        let vocab = word_vocab(n);
        let spec = random_spec(&mut rng, n, 4, 3, 0.25);
        let seq = random_sequence(&mut rng, &vocab, 12);
        let a = ConstraintAutomaton::compile(&spec, &vocab).map_err(|e| format!("seed {seed}: {e}"))?;
        let state = a.run(&seq);
        let status = a.status(&state);
        let naive = naive_status(&spec, &vocab, &seq);
        let mut spans: Vec<_> = state.satisfied_spans().iter().map(|s| (s.predicate, s.start, s.end)).collect();
        spans.sort_unstable();
        if status.signature != naive.counts
            || status.clauses != naive.clauses
            || status.satisfied != naive.satisfied
            || status.violated != naive.violated
            || spans != naive.spans
        {
            return Err(format!("seed {seed}: automaton {status:?} vs oracle {naive:?}"));
        }
        violated += usize::from(naive.violated);

        let lm = random_table_lm(&mut rng, &vocab, 2);
        let params = DecodeParams { beam_size: 4, top_k: 3, max_new_tokens: 6, seed, ..DecodeParams::default() };
        if let Ok(out) = decode(&lm, &[], &a, params) {
            let negated = negated_phrases(&spec, &vocab);
            for h in &out.hypotheses {
                decoded += 1;
                if let Some(p) = negated.iter().find(|p| occurs(p, h.words())) {
                    return Err(format!("seed {seed}: negated phrase {p:?} in {:?}", h.words()));
                }
            }
        }
    }
    Ok(format!("1000/1000 agree ({violated} violated), no negated phrase in {decoded} decoded hypotheses"))
}

fn negated_phrases(spec: &ConstraintSpec, vocab: &Vocabulary) -> Vec<Vec<TokenId>> {
    spec.clauses
        .iter()
        .flat_map(|c| &c.predicates)
        .filter(|p| p.negated)
        .map(|p| vocab.tokenize(&p.phrase).into_inner())
        .collect()
}

fn random_prompt(rng: &mut ChaCha8Rng, pool: &[&str], words: &[String]) -> String {
    if rng.random_bool(0.5) {
        return pool[rng.random_range(0..pool.len())].to_string();
    }
    let mut out = String::new();
    for i in 0..rng.random_range(1..=10) {
        if i > 0 {
            out.push_str(if rng.random_bool(0.2) { ", " } else { " " });
        }
        let w = if rng.random_bool(0.1) { "zqxv".to_string() } else { words[rng.random_range(0..words.len())].clone() };
        out.push_str(&if rng.random_bool(0.2) { w.to_uppercase() } else { w });
    }
    out
}

fn prefix_rule() -> Verdict {
    let taxonomy = KeywordTaxonomy::bundled();
    let optimizer = PromptOptimizer::new(Arc::new(bundled_ngram(2, 0.1)), taxonomy);
    let pool: Vec<&str> = bundled_train_prompts().into_iter().chain(bundled_eval_prompts()).collect();
    let words: Vec<String> = pool.iter().flat_map(|p| split_words(p)).filter(|w| w != ",").collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut satisfied = 0;
    for i in 0..500u64 {
        let prompt = random_prompt(&mut rng, &pool, &words);
        let params = DecodeParams { seed: i, ..DecodeParams::default() };
        let out = optimizer
            .optimize(&prompt, &ClauseSelection::auto(i), &params)
            .map_err(|e| format!("{prompt:?}: {e}"))?;
        let want = split_words(extract_prefix(&prompt));
        if !split_words(&out.optimized_prompt).starts_with(&want) {
            return Err(format!("{prompt:?} -> {:?}", out.optimized_prompt));
        }
        satisfied += usize::from(out.satisfied);
    }
    Ok(format!("500/500 optimized prompts start with their prefix ({satisfied} fully satisfied)"))
}

fn pipeline_formulas() -> Verdict {
    let golden = include_str!("golden/prefix_cases.tsv");
    let mut cases = 0;
    for line in golden.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let (num, den) = f[2].split_once('/').ok_or("bad overlap column")?;
        let want = num.parse::<f64>().unwrap() / den.parse::<f64>().unwrap();
        let kept: bool = f[3].parse().map_err(|_| "bad kept column")?;
        let prefix = extract_prefix(f[0]);
        let (overlap, under) = overlap_filter(prefix, f[0], DEFAULT_OVERLAP_THRESHOLD);
        let record = process_prompt(&TokenJaccard, f[0], DEFAULT_OVERLAP_THRESHOLD);
        if prefix != f[1] || overlap != want || record.kept != kept || (under != kept && !prefix.is_empty()) {
            return Err(format!("{line:?}: prefix {prefix:?}, overlap {overlap}, kept {}", record.kept));
        }
        cases += 1;
    }
    if cases != 20 {
        return Err(format!("golden file has {cases} cases"));
    }
    let taxonomy = KeywordTaxonomy::bundled();
    for seed in [0, 7, 42] {
        let spec = build_clauses(&taxonomy, &ClauseSelection::auto(seed)).map_err(|e| e.to_string())?;
        let shape: Vec<usize> = spec.clauses.iter().map(|c| c.predicates.len()).collect();
        if shape != vec![KEYWORDS_PER_CLAUSE; 6] || KEYWORDS_PER_CLAUSE != 5 {
            return Err(format!("seed {seed}: clause shape {shape:?}"));
        }
        for (clause, category) in spec.clauses.iter().zip(Category::ALL) {
            if let Some(p) = clause.predicates.iter().find(|p| p.negated || !taxonomy.contains(category, &p.phrase)) {
                return Err(format!("seed {seed}: {:?} is not a {category} keyword", p.phrase));
            }
        }
    }
    Ok("20/20 golden cases; auto mode builds 6 clauses x 5 keywords".into())
}

struct Embedded(Vec<f64>, Vec<f64>, Vec<f64>);

impl Scorer for Embedded {
    fn score(&self, _: &str, image: &ImageRef) -> Result<f64, ScoringError> {
        let v = if image.id == "a" { &self.1 } else { &self.2 };
        pick_score(&EmbeddingPair::new(self.0.clone(), v.clone())?)
    }
}

fn reward_math() -> Verdict {
    let img = |id: &str| ImageRef { id: id.into(), url: None, source_prompt: None };
    let (a, b) = (img("a"), img("b"));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = rng.random_range(1..16);
        let mut v = || (0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let s = Embedded(v(), v(), v());
        let ab = reward("x", &a, &b, &s).map_err(|e| e.to_string())?;
        let ba = reward("x", &b, &a, &s).map_err(|e| e.to_string())?;
        let aa = reward("x", &a, &a, &s).map_err(|e| e.to_string())?;
        let dot = |u: &[f64]| s.0.iter().zip(u).map(|(x, y)| x * y).sum::<f64>();
        let by_hand = dot(&s.2) - dot(&s.1);
        let err = (ab + ba).abs().max(aa.abs()).max((ab - by_hand).abs());
        if err > 1e-12 {
            return Err(format!("pair {i}: error {err:e}"));
        }
        worst = worst.max(err);
    }
    let p = preference_probability(1.0, 0.5);
    let closed = 1f64.exp() / (1f64.exp() + 0.5f64.exp());
    check(
        (p - 0.6225).abs() <= 1e-4 && (p - closed).abs() < 1e-15,
        format!("100 pairs, worst error {worst:.1e}; preference(1.0, 0.5) = {p:.6}"),
    )
}

fn ppo_correctness() -> Verdict {
    let start = Instant::now();
    let fd = (0..20).map(finite_difference_error).fold(0.0, f64::max);
    if fd >= 1e-4 {
        return Err(format!("finite-difference relative error {fd:e}"));
    }
    let reached: Vec<bool> = (0..5)
        .map(|seed| {
            let run = run_bandit(seed, 0.2);
            run.p_best.len() == 200 && run.p_best.iter().any(|p| *p > 0.9)
        })
        .collect();
    let wins = reached.iter().filter(|r| **r).count();
    if wins < 4 {
        return Err(format!("bandit reached P(best) > 0.9 on {wins} of 5 seeds"));
    }
    let mut change: f64 = 0.0;
    for seed in 0..32 {
        let (c, zero) = zero_advantage_change(seed);
        if !zero {
            return Err(format!("seed {seed}: zero-reward batch had non-zero advantages"));
        }
        change = change.max(c);
    }
    let t = start.elapsed();
    check(
        change <= 1e-12 && t < Duration::from_secs(300),
        format!(
            "gradient error {fd:.1e}; bandit {wins}/5 seeds; zero-advantage change {change:.1e}; {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn ablation_ordering() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let json = dir.path().join("report.json");
    let cli = Cli::try_parse_from([
        "nprompt",
        "--mode",
        "stub",
        "evaluate",
        "--n",
        "200",
        "--conditions",
        "all",
        "--json",
        json.to_str().unwrap(),
    ])
    .map_err(|e| e.to_string())?;
    run(cli, &mut std::io::sink()).map_err(|e| format!("{e:#}"))?;
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let means: Vec<String> = report
        .results
        .iter()
        .map(|r| format!("{} {:.3}", r.condition, r.mean_aesthetics))
        .collect();
    let tests: Vec<String> = report
        .sign_tests
        .iter()
        .map(|t| format!("{}>{} p={:.1e}", t.better, t.worse, t.p_value))
        .collect();
    check(report.n == 200 && report.ordering_holds(0.01), format!("{}; {}", means.join(", "), tests.join(", ")))
}

fn replay() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("records.jsonl");
    let taxonomy = KeywordTaxonomy::bundled();
    let state = AppState::new(
        PromptOptimizer::new(Arc::new(bundled_ngram(2, 0.1)), taxonomy.clone()),
        ScoringBackends::stub(&taxonomy, 0),
        RecordStore::open(&path).map_err(|e| e.to_string())?,
        0,
        DecodeParams::default(),
    );
    let prompts = bundled_eval_prompts();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..40usize {
        let mut sel = ClauseSelection::default();
        match i % 4 {
            1 => {
                let kw = taxonomy.keywords(Category::Style)[i % 37].clone();
                sel = sel.with(Category::Style, CategorySelection::Keywords(vec![kw]));
            }
            2 => {
                sel = sel.with(Category::Artist, CategorySelection::Keywords(vec![]));
                sel.negative_phrases = vec!["octane render".into()];
            }
            3 => sel = sel.with(Category::Vibe, CategorySelection::Keywords(vec![])),
            _ => {}
        }
        let decode_params = (i % 3 == 0).then(|| DecodeParams {
            beam_size: rng.random_range(1..=12),
            satisfaction_weight: rng.random_range(0.0..1.0),
            max_new_tokens: rng.random_range(16..=40),
            ..DecodeParams::default()
        });
        let req = OptimizeRequest {
            prompt: prompts[i * 7 % prompts.len()].to_string(),
            selections: Some(sel),
            seed: (i % 2 == 0).then_some(rng.random()),
            decode_params,
        };
        let out = state.optimize(req).map_err(|e| e.message)?;
        if i % 5 == 0 {
            state.compare(&out.record_id).map_err(|e| e.message)?;
        }
    }
    drop(state);

    let fresh = PromptOptimizer::new(Arc::new(bundled_ngram(2, 0.1)), taxonomy);
    let lines = RecordStore::read(&path).map_err(|e| e.to_string())?;
    for r in &lines {
        let again = r.replay(&fresh).map_err(|e| format!("{}: {e}", r.id))?;
        if again.as_bytes() != r.optimized_prompt.as_bytes() {
            return Err(format!("{}: {:?} replayed as {:?}", r.id, r.optimized_prompt, again));
        }
    }
    let cli = Cli::try_parse_from(["nprompt", "replay", "--records", path.to_str().unwrap()]).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    run(cli, &mut out).map_err(|e| format!("{e:#}"))?;
    let ok = String::from_utf8_lossy(&out).lines().filter(|l| l.ends_with(" ok")).count();
    check(ok == 40, format!("{} log lines and {ok} records replay byte-identically", lines.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("decoder oracle equivalence", decoder_oracle),
        ("constraint semantics", constraint_semantics),
        ("prefix rule", prefix_rule),
        ("pipeline formulas", pipeline_formulas),
        ("reward and preference math", reward_math),
        ("PPO correctness", ppo_correctness),
        ("stub-mode ablation ordering", ablation_ordering),
        ("determinism and replay", replay),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
