//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use common::{
    away_from_kinks, dense_forward, dfs_paths, gradient_errors, max_state_gap, random_instance,
    InstanceSpec,
};
use hopwise::encoder::HashEncoder;
use hopwise::eval::{
    evaluate, prepare_all, sweep_fewshot, sweep_kn, synth_generate, EvalReport, GraphSource,
    PipelineConfig, QaExample, SynthSpec,
};
use hopwise::kg::KnowledgeGraph;
use hopwise::llm::normalize_answer;
use hopwise::pathgen::{enumerate_paths, generate_paths, PathConfig};
use hopwise::prompt::{build_prompt, default_exemplars, parse_path_text, serialize_path, ARROW};
use hopwise::reasoner::checkpoint::Checkpoint;
use hopwise::reasoner::train::{train, TrainConfig};
use hopwise::reasoner::{forward, ReasoningOptions, MASK_THRESHOLD};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    let took = start.elapsed();
    if took > limit {
        v.pass = false;
    }
    v.detail = format!(
        "{} [{:.1}s, limit {}s]",
        v.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    v
}

fn propagation_oracle() -> Verdict {
    let spec = InstanceSpec::default();
    let opts = ReasoningOptions::default();
    let mut worst: f64 = 0.0;
    let mut hop_mismatch = 0;
    for seed in 0..100 {
        let inst = random_instance(seed, &spec);
        let trace = forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts).unwrap();
        let dense = dense_forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts);
        worst = worst.max(max_state_gap(&trace, &dense, inst.kg.entity_count()));
        if trace.hop.hops != dense.hops {
            hop_mismatch += 1;
        }
    }
    verdict(
        worst <= 1e-9 && hop_mismatch == 0,
        format!(
            "max |sparse - dense| = {worst:.3e} over 100 graphs, hop mismatches {hop_mismatch}"
        ),
    )
}

fn mask_oracle() -> Verdict {
    let spec = InstanceSpec::default();
    let opts = ReasoningOptions::default();
    let mut bad = 0;
    let mut active_bits = 0;
    let mut total_bits = 0;
    for seed in 0..100 {
        let inst = random_instance(seed, &spec);
        let trace = forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts).unwrap();
        let dense = dense_forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts);
        let steps_agree = trace
            .steps
            .iter()
            .zip(&dense.step_masks)
            .all(|(s, want)| &s.step_mask == want);
        if trace.mask.bits != dense.mask || !steps_agree {
            bad += 1;
        }
        active_bits += dense.mask.iter().filter(|&&b| b).count();
        total_bits += dense.mask.len();
    }
    verdict(
        bad == 0,
        format!("{bad} of 100 masks differ ({active_bits}/{total_bits} bits set)"),
    )
}

fn path_oracle() -> Verdict {
    let spec = InstanceSpec {
        max_entities: 200,
        degree: 2.5,
        ..InstanceSpec::default()
    };
    let opts = ReasoningOptions::default();
    let mut bad = 0;
    let mut paths = 0;
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, &spec);
        let trace = forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts).unwrap();
        let k = 1 + (seed as usize * 7) % 20;
        let cfg = PathConfig {
            top_k: k,
            beam: None,
            ..PathConfig::default()
        };
        let got = enumerate_paths(&trace, &inst.topics, &inst.kg, &cfg);
        let got_set: HashSet<_> = got
            .iter()
            .map(|p| {
                (
                    p.entities().to_vec(),
                    p.relations().iter().map(|r| r.0).collect::<Vec<_>>(),
                )
            })
            .collect();
        let want = dfs_paths(&trace, &inst.topics, &inst.kg, k, MASK_THRESHOLD);
        if got_set != want || got_set.len() != got.len() {
            bad += 1;
        }
        paths += want.len();
    }
    verdict(
        bad == 0,
        format!("{bad} of 100 instances differ from DFS ({paths} reference paths)"),
    )
}

fn gradient_check() -> Verdict {
    let spec = InstanceSpec {
        max_entities: 12,
        max_relations: 8,
        max_dim: 16,
        degree: 1.5,
        bias_scale: 1.5,
        ..InstanceSpec::default()
    };
    let opts = ReasoningOptions::default();
    let mut worst: f64 = 0.0;
    let mut worst_group = String::new();
    let mut accepted = 0;
    let mut seed = 5000;
    while accepted < 20 && seed < 50_000 {
        seed += 1;
        let inst = random_instance(seed, &spec);
        let trace = forward(&inst.enc, &inst.topics, &inst.kg, &inst.params, &opts).unwrap();
        if !away_from_kinks(&trace, &opts, 1e-3) {
            continue;
        }
        accepted += 1;
        for (g, err) in gradient_errors(&inst, &opts, 1e-5) {
            if err > worst {
                worst = err;
                worst_group = g.name().to_string();
            }
        }
    }
    verdict(
        accepted == 20 && worst < 1e-4,
        format!("{accepted} instances, worst group relative error {worst:.2e} ({worst_group})"),
    )
}

struct Suite {
    kg: KnowledgeGraph,
    train: Vec<QaExample>,
    test: Vec<QaExample>,
}

const SYNTH_SEED: u64 = 2024;
const ENCODER_SEED: u64 = 5;

fn suite() -> Suite {
    let (kg, examples) = synth_generate(&SynthSpec::default(), SYNTH_SEED).unwrap();
    let (train, test) = examples.split_at(500);
    Suite {
        kg,
        train: train.to_vec(),
        test: test.to_vec(),
    }
}

fn train_config(mask_off: bool) -> TrainConfig {
    TrainConfig {
        steps: 2,
        d: 32,
        epochs: 30,
        lr: 1e-2,
        hop_warmup: 10,
        seed: 11,
        encoder_seed: ENCODER_SEED,
        mask_off,
        ..TrainConfig::default()
    }
}

fn train_model(s: &Suite, mask_off: bool) -> Checkpoint {
    let cfg = train_config(mask_off);
    let enc = HashEncoder::new(cfg.d, cfg.encoder_seed).unwrap();
    let prepared = prepare_all(
        &s.train,
        GraphSource::Shared(&s.kg),
        s.kg.relations(),
        &enc,
        None,
    )
    .unwrap();
    let samples: Vec<_> = prepared.iter().filter_map(|q| q.train_sample()).collect();
    let out = train(&samples, s.kg.relation_count(), &cfg).unwrap();
    Checkpoint {
        params: out.params,
        options: cfg.options(),
        encoder_seed: cfg.encoder_seed,
        relations: s.kg.relations().clone(),
    }
    .quantized()
}

fn report_text(r: &EvalReport) -> Vec<u8> {
    let mut buf = Vec::new();
    r.write_tsv(&mut buf).unwrap();
    buf.extend_from_slice(r.summary().as_bytes());
    buf
}

struct Trained {
    model: Checkpoint,
    ablation: Checkpoint,
    report: EvalReport,
    ablation_report: EvalReport,
}

fn synthetic_learning(s: &Suite, out: &mut Option<Trained>) -> Verdict {
    let model = train_model(s, false);
    let ablation = train_model(s, true);
    let cfg = PipelineConfig::default();
    let report = evaluate(&model, &s.test, GraphSource::Shared(&s.kg), &cfg).unwrap();
    let ablation_report = evaluate(&ablation, &s.test, GraphSource::Shared(&s.kg), &cfg).unwrap();
    let hop = report.hop_accuracy.unwrap_or(0.0);
    let v = verdict(
        report.path_hit_rate >= 0.95 && hop >= 0.90,
        format!(
            "held-out path_hit_rate@10 = {:.3}, hop_accuracy = {hop:.3} ({} questions)",
            report.path_hit_rate, report.questions
        ),
    );
    *out = Some(Trained {
        model,
        ablation,
        report,
        ablation_report,
    });
    v
}

fn ablation_direction(t: &Trained) -> Verdict {
    let with_mask = t.report.hop_accuracy.unwrap_or(0.0);
    let without = t.ablation_report.hop_accuracy.unwrap_or(0.0);
    verdict(
        with_mask > without,
        format!("hop_accuracy with mask {with_mask:.3} vs zero-mask ablation {without:.3}"),
    )
}

fn mock_consistency(s: &Suite, t: &Trained) -> Verdict {
    let cfg = PipelineConfig::default();
    let enc = HashEncoder::new(t.model.params.shape.dim, t.model.encoder_seed).unwrap();
    let prepared = prepare_all(
        &s.test,
        GraphSource::Shared(&s.kg),
        &t.model.relations,
        &enc,
        None,
    )
    .unwrap();
    let opts = cfg.options(&t.model);
    let mut hits = 0;
    for q in &prepared {
        let trace = forward(&q.encoding, &q.topics, &q.graph, &t.model.params, &opts).unwrap();
        let paths = generate_paths(&trace, &q.topics, &q.graph, &cfg.paths);
        if let Some(first) = paths.selected.first() {
            let label = normalize_answer(q.graph.entity_name(first.terminal()).unwrap());
            if q.example
                .answers
                .iter()
                .any(|a| normalize_answer(a) == label)
            {
                hits += 1;
            }
        }
    }
    let expected = hits as f64 / prepared.len() as f64;
    let mut all_reports = vec![&t.report, &t.ablation_report];
    let fewshot_off = evaluate(
        &t.model,
        &s.test,
        GraphSource::Shared(&s.kg),
        &PipelineConfig {
            fewshot: 0,
            ..PipelineConfig::default()
        },
    )
    .unwrap();
    all_reports.push(&fewshot_off);
    let rows_agree = all_reports
        .iter()
        .all(|r| r.rows.iter().all(|row| row.correct == row.top_path_hit));
    verdict(
        t.report.accuracy == expected && fewshot_off.accuracy == expected && rows_agree,
        format!(
            "mock accuracy {:.3} (E=3), {:.3} (E=0); first-path-in-gold fraction {expected:.3}",
            t.report.accuracy, fewshot_off.accuracy
        ),
    )
}

fn determinism(s: &Suite, t: &Trained) -> Verdict {
    let (kg2, ex2) = synth_generate(&SynthSpec::default(), SYNTH_SEED).unwrap();
    let same_data = kg2.triples() == s.kg.triples() && ex2[500..] == s.test[..];
    let second = Suite {
        kg: kg2,
        train: ex2[..500].to_vec(),
        test: ex2[500..].to_vec(),
    };
    let model = train_model(&second, false);
    let report = evaluate(
        &model,
        &second.test,
        GraphSource::Shared(&second.kg),
        &PipelineConfig::default(),
    )
    .unwrap();
    let same_ckpt = model.to_bytes() == t.model.to_bytes();
    let same_report = report_text(&report) == report_text(&t.report);
    verdict(
        same_data && same_ckpt && same_report,
        format!(
            "data identical: {same_data}, checkpoint identical: {same_ckpt} (sha256 {}), report identical: {same_report}",
            &model.fingerprint()[..16]
        ),
    )
}

fn sweep_shape(s: &Suite, t: &Trained) -> Verdict {
    let base = PipelineConfig::default();
    let src = GraphSource::Shared(&s.kg);
    let mut rates = Vec::new();
    let mut monotone = true;
    for model in [&t.model, &t.ablation] {
        let rows = sweep_kn(model, &s.test, src, &base, &[5, 10, 15], &[1]).unwrap();
        let r: Vec<f64> = rows.iter().map(|r| r.report.path_hit_rate).collect();
        monotone &= r.windows(2).all(|w| w[0] <= w[1]);
        rates.push(r);
    }
    let e_rows = sweep_fewshot(&t.model, &s.test, src, &base, &[0, 1, 2, 3, 4, 5]).unwrap();
    let fewshot_ok = e_rows.len() == 6
        && e_rows
            .iter()
            .enumerate()
            .all(|(e, r)| r.report.config.get("fewshot") == Some(&e.to_string()));
    verdict(
        monotone && fewshot_ok,
        format!(
            "path_hit_rate over K=5,10,15: {:?} (model), {:?} (ablation); E sweep rows {}",
            rates[0],
            rates[1],
            e_rows.len()
        ),
    )
}

fn grammar_ok(text: &str) -> bool {
    let parts: Vec<&str> = text.split(ARROW).collect();
    parts.len() >= 3
        && parts.len() % 2 == 1
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.trim() == *p && !p.contains('\n') && !p.contains("->"))
}

fn format_fidelity(s: &Suite, t: &Trained) -> Verdict {
    let cfg = PipelineConfig {
        paths: PathConfig {
            top_k: 15,
            per_entity: 5,
            ..PathConfig::default()
        },
        ..PipelineConfig::default()
    };
    let enc = HashEncoder::new(t.model.params.shape.dim, t.model.encoder_seed).unwrap();
    let prepared = prepare_all(
        &s.test,
        GraphSource::Shared(&s.kg),
        &t.model.relations,
        &enc,
        None,
    )
    .unwrap();
    let opts = cfg.options(&t.model);
    let mut checked = 0;
    let mut bad = 0;
    let mut prompt_bad = 0;
    let exemplars = default_exemplars();
    for q in &prepared {
        let trace = forward(&q.encoding, &q.topics, &q.graph, &t.model.params, &opts).unwrap();
        let report = generate_paths(&trace, &q.topics, &q.graph, &cfg.paths);
        let mut texts = Vec::new();
        for p in &report.selected {
            let text = serialize_path(p, &q.graph).unwrap();
            let (ents, rels) = parse_path_text(&text).unwrap();
            let want_e: Vec<&str> = p
                .entities()
                .iter()
                .map(|&e| q.graph.entity_name(e).unwrap())
                .collect();
            let want_r: Vec<&str> = p
                .relations()
                .iter()
                .map(|&r| q.graph.relation_name(r).unwrap())
                .collect();
            let mut rebuilt = vec![ents[0].clone()];
            for (r, e) in rels.iter().zip(&ents[1..]) {
                rebuilt.push(r.clone());
                rebuilt.push(e.clone());
            }
            if !grammar_ok(&text) || ents != want_e || rels != want_r || rebuilt.join(ARROW) != text
            {
                bad += 1;
            }
            checked += 1;
            texts.push(text);
        }
        for (e, want) in [(3usize, 3usize), (0, 0)] {
            let prompt = build_prompt(&q.example.question, &texts, &exemplars, e).unwrap();
            let blocks = prompt
                .text
                .lines()
                .filter(|l| l.starts_with("### Example "))
                .count();
            if blocks != want || prompt.exemplar_count != e {
                prompt_bad += 1;
            }
        }
    }
    verdict(
        bad == 0 && prompt_bad == 0 && checked > 0,
        format!("{checked} paths checked, {bad} grammar/round-trip failures, {prompt_bad} prompts with wrong block count"),
    )
}

fn main() {
    let mut lines: Vec<(String, Verdict)> = Vec::new();
    let mut record = |name: &str, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {status} - {}", v.detail);
        lines.push((name.to_string(), v));
    };

    record(
        "1 propagation oracle",
        timed(Duration::from_secs(30), propagation_oracle),
    );
    record("2 mask oracle", timed(Duration::from_secs(30), mask_oracle));
    record("3 path oracle", timed(Duration::from_secs(60), path_oracle));
    record(
        "4 gradient check",
        timed(Duration::from_secs(60), gradient_check),
    );

    let s = suite();
    let mut trained = None;
    record(
        "5 synthetic learning",
        timed(Duration::from_secs(300), || {
            synthetic_learning(&s, &mut trained)
        }),
    );
    let t = trained.expect("criterion 5 trains the models");
    record("6 ablation direction", ablation_direction(&t));
    record("7 mock consistency", mock_consistency(&s, &t));
    record("8 determinism", determinism(&s, &t));
    record("9 sweep shape", sweep_shape(&s, &t));
    record("10 format fidelity", format_fidelity(&s, &t));

    let failed: BTreeSet<&str> = lines
        .iter()
        .filter(|(_, v)| !v.pass)
        .map(|(n, _)| n.as_str())
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        lines.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
