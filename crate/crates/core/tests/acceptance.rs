//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints a PASS/FAIL line; exits non-zero when any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;

use umd2_core::datamodel::{EmbeddingSet, EngagementKind, Modality, ModalityMask};
use umd2_core::dataset::{
    build_dataset, read_articles, read_dump, synth_generate, DatasetStats, HarvestConfig, StageReport, SyntheticSpec,
};
use umd2_core::eval::{agglomerative_ward, hungarian, map_clusters, metrics, Averaging};
use umd2_core::nn::gradcheck::{self, GradCheckReport};
use umd2_core::nn::{attention_support, Activation, Dense, GatLayer, LstmCell, MultiHeadAttention, ParamStore, Tensor};
use umd2_core::pipeline::{assemble_sets, pretrain_all, PretrainConfig};
use umd2_core::prop::{contextual_contrast_loss, temporal_contrast_loss, ContextNegatives, PropNet};
use umd2_core::rng::{seeded, Rng};
use umd2_core::source::triple_loss;
use umd2_core::umd2::{
    ema_update, gamma_schedule, gmu_forward, gmu_forward_tape, head_logits, kshot_assign, majority_oracle,
    peer_loss_with_pairs, predict, prepare_batch, rince_loss, rince_pair, train_umd2, write_predictions, NetNames,
    Network, PoolRecord, PredictionRow, Umd2Config, Umd2Model,
};
use umd2_core::user::{dgi_objective, DgiNormalizer, DISCRIMINATOR};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut out = f();
    let took = t0.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over the {limit:?} budget"));
        }
    }
    out.detail.push_str(&format!(" [{:.2}s]", took.as_secs_f64()));
    out
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/harvest").join(name)
}

// 1

fn closed_forms() -> Outcome {
    let ln2 = 2f64.ln();
    let triple = triple_loss(0.0, 0.0);
    let r0 = rince_pair(0.0, 0.0, 0.5, 0.5);
    let r1 = rince_pair(1.0, 0.0, 1.0, 0.5);

    let mut tape = umd2_core::nn::Tape::new();
    let z = tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut seeded(1)));
    let zt = tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut seeded(2)));
    let w = tape.constant(Tensor::zeros(&[4, 4]));
    let dgi = dgi_objective(&mut tape, z, zt, 0, w, DgiNormalizer::Literal).map(|v| tape.value(v).item());

    let Ok(dgi) = dgi else {
        return Outcome::new(false, "dgi objective errored");
    };
    let checks = [
        ((triple - 2.0 * ln2).abs(), 1e-12),
        (r0.abs(), 1e-12),
        ((r1 + 0.859141).abs(), 1e-6),
        ((dgi + 4.0 * ln2).abs(), 1e-12),
    ];
    Outcome::new(
        checks.iter().all(|(e, tol)| e <= tol),
        format!("triple {triple:.15}, rince {r0:.3e} / {r1:.7}, dgi {dgi:.15}"),
    )
}

// 2

const GRAD_SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn grad_dense(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let layer = Dense::new("dense", 4, 3, Activation::Tanh);
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut rng).unwrap();
    *store.get_mut(&layer.bias_name()).unwrap() = uniform(&[1, 3], &mut rng);
    let x = uniform(&[5, 4], &mut rng);
    gradcheck::check(&store, &[x], EPS, |tape, st, v| {
        let y = layer.forward(tape, st, v[0])?;
        Ok(gradcheck::project(tape, y, seed))
    })
    .unwrap()
}

fn lstm_store(seed: u64) -> (LstmCell, ParamStore, Rng) {
    let mut rng = seeded(seed);
    let cell = LstmCell::new("lstm", 3, 4);
    let mut store = ParamStore::new();
    cell.init(&mut store, &mut rng).unwrap();
    *store.get_mut("lstm.bias").unwrap() = uniform(&[1, 16], &mut rng);
    (cell, store, rng)
}

fn grad_lstm_step(seed: u64) -> GradCheckReport {
    let (cell, store, mut rng) = lstm_store(seed);
    let inputs = [uniform(&[2, 3], &mut rng), uniform(&[2, 4], &mut rng), uniform(&[2, 4], &mut rng)];
    gradcheck::check(&store, &inputs, EPS, |tape, st, v| {
        let vars = cell.bind(tape, st)?;
        let (h, c) = cell.step(tape, &vars, v[0], (v[1], v[2]))?;
        let both = tape.concat_cols(&[h, c]);
        Ok(gradcheck::project(tape, both, seed))
    })
    .unwrap()
}

fn grad_lstm_unroll(seed: u64) -> GradCheckReport {
    let (cell, store, mut rng) = lstm_store(seed);
    let xs: Vec<Tensor> = (0..5).map(|_| uniform(&[2, 3], &mut rng)).collect();
    gradcheck::check(&store, &xs, EPS, |tape, st, v| {
        let vars = cell.bind(tape, st)?;
        let mut state = cell.zero_state(tape, 2);
        let mut hs = Vec::new();
        for &x in v {
            state = cell.step(tape, &vars, x, state)?;
            hs.push(state.0);
        }
        let all = tape.concat_cols(&hs);
        Ok(gradcheck::project(tape, all, seed))
    })
    .unwrap()
}

fn grad_attention(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let att = MultiHeadAttention::new("att", 4, 2).unwrap();
    let mut store = ParamStore::new();
    att.init(&mut store, &mut rng).unwrap();
    let x = uniform(&[6, 4], &mut rng);
    let causal = seed % 2 == 1;
    gradcheck::check(&store, &[x], EPS, |tape, st, v| {
        let y = att.forward(tape, st, v[0], 3, causal)?;
        Ok(gradcheck::project(tape, y, seed))
    })
    .unwrap()
}

fn grad_gat(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let gat = GatLayer::new("gat", 3, 2, 2, Activation::Tanh);
    let mut store = ParamStore::new();
    gat.init(&mut store, &mut rng).unwrap();
    let edges: Vec<(usize, usize)> = (0..6).map(|_| (rng.random_range(0..5), rng.random_range(0..5))).collect();
    let support = attention_support(5, edges);
    let h = uniform(&[5, 3], &mut rng);
    gradcheck::check(&store, &[h], EPS, |tape, st, v| {
        let y = gat.forward(tape, st, v[0], &support)?;
        Ok(gradcheck::project(tape, y, seed))
    })
    .unwrap()
}

fn fusion_store(dim: usize, fused: usize, clusters: usize, rng: &mut Rng) -> (ParamStore, NetNames) {
    let names = NetNames::new("student");
    let mut store = ParamStore::new();
    names.init(&mut store, dim, fused, clusters, rng).unwrap();
    *store.get_mut(&names.gate()).unwrap() = Tensor::uniform(&[4, 4 * dim], 0.5, rng);
    *store.get_mut(&names.head_weight()).unwrap() = Tensor::xavier(clusters, fused, rng);
    *store.get_mut(&names.head_bias()).unwrap() = uniform(&[1, clusters], rng);
    (store, names)
}

fn random_set(dim: usize, rng: &mut Rng) -> EmbeddingSet {
    let mut v = || uniform(&[1, dim], rng).row_vec(0);
    EmbeddingSet::full(v(), v(), v(), v()).unwrap()
}

fn random_mask(rng: &mut Rng) -> ModalityMask {
    let bits = rng.random_range(1u8..16);
    let w: [f64; 4] = std::array::from_fn(|k| {
        if (bits >> k) & 1 == 1 {
            if rng.random_bool(0.5) {
                1.0
            } else {
                rng.random_range(0.1..1.0)
            }
        } else {
            0.0
        }
    });
    ModalityMask::new(w).unwrap()
}

fn grad_gmu(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let (store, names) = fusion_store(3, 3, 2, &mut rng);
    let sets: Vec<EmbeddingSet> = (0..4).map(|_| random_set(3, &mut rng)).collect();
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let masks: Vec<ModalityMask> = (0..4).map(|_| random_mask(&mut rng)).collect();
    let batch = prepare_batch(&refs, &masks, 3).unwrap();
    gradcheck::check(&store, &[], EPS, |tape, st, _| {
        let (z, w) = gmu_forward_tape(tape, st, &names, &batch)?;
        let both = tape.concat_cols(&[z, w]);
        Ok(gradcheck::project(tape, both, seed))
    })
    .unwrap()
}

fn grad_heads(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let (store, names) = fusion_store(3, 3, 3, &mut rng);
    let z = uniform(&[6, 3], &mut rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let pool = vec![0, 2, 3, 5];
    let pairs: Vec<(usize, usize)> = pool.iter().map(|_| (pool[rng.random_range(0..4)], pool[rng.random_range(0..4)])).collect();
    gradcheck::check(&store, &[z], EPS, |tape, st, v| {
        let logits = head_logits(tape, st, &names, v[0])?;
        let lp = tape.log_softmax_rows(logits);
        peer_loss_with_pairs(tape, lp, &labels, &pool, &pairs)
    })
    .unwrap()
}

fn grad_temporal(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    for j in 1..=2 {
        store.insert(PropNet::predictor_name(j), Tensor::xavier(3, 3, &mut rng)).unwrap();
    }
    let ctx = uniform(&[10, 3], &mut rng);
    let lat = uniform(&[10, 3], &mut rng);
    let t = (seed % 3) as usize;
    gradcheck::check(&store, &[ctx, lat], EPS, |tape, st, v| {
        temporal_contrast_loss(tape, st, v[0], v[1], 5, t, 2)
    })
    .unwrap()
}

fn grad_contextual(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let za = uniform(&[3, 4], &mut rng);
    let zb = uniform(&[3, 4], &mut rng);
    let negatives = if seed.is_multiple_of(2) { ContextNegatives::CrossView } else { ContextNegatives::AllViews };
    gradcheck::check(&ParamStore::new(), &[za, zb], EPS, |tape, _, v| {
        contextual_contrast_loss(tape, v[0], v[1], 0.5, negatives)
    })
    .unwrap()
}

fn grad_rince(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let s = uniform(&[4, 3], &mut rng);
    let t = uniform(&[4, 3], &mut rng);
    gradcheck::check(&ParamStore::new(), &[s, t], EPS, |tape, _, v| rince_loss(tape, v[0], v[1], 0.5, 0.5)).unwrap()
}

fn grad_dgi(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    store.insert(DISCRIMINATOR, Tensor::xavier(3, 3, &mut rng)).unwrap();
    let z = uniform(&[5, 3], &mut rng);
    let zt = uniform(&[5, 3], &mut rng);
    let star = (seed % 5) as usize;
    gradcheck::check(&store, &[z, zt], EPS, |tape, st, v| {
        let w = tape.param(st, DISCRIMINATOR)?;
        dgi_objective(tape, v[0], v[1], star, w, DgiNormalizer::Literal)
    })
    .unwrap()
}

fn gradient_suite() -> Outcome {
    let ops: [(&str, fn(u64) -> GradCheckReport); 11] = [
        ("dense", grad_dense),
        ("lstm step", grad_lstm_step),
        ("lstm unroll", grad_lstm_unroll),
        ("attention", grad_attention),
        ("gat", grad_gat),
        ("gmu", grad_gmu),
        ("cluster heads", grad_heads),
        ("temporal contrast", grad_temporal),
        ("contextual contrast", grad_contextual),
        ("rince", grad_rince),
        ("dgi", grad_dgi),
    ];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, op) in &ops {
        for seed in 0..GRAD_SEEDS {
            let r = op(seed);
            checked += r.checked;
            worst = worst.max(r.max_rel_error);
            if !(r.max_rel_error < GRAD_TOL) {
                failures.push(format!("{name} seed {seed}: {}", r.worst));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{} ops x {GRAD_SEEDS} seeds, {checked} partials, max rel error {worst:.2e}", ops.len())
    } else {
        format!("{} failures, first {}", failures.len(), failures[0])
    };
    Outcome::new(failures.is_empty(), detail)
}

// 3

fn masking() -> Outcome {
    let mut rng = seeded(3);
    let stores: Vec<(ParamStore, NetNames)> = (0..10).map(|_| fusion_store(4, 3, 2, &mut rng)).collect();
    let mut bad = Vec::new();
    for i in 0..1000 {
        let (store, names) = &stores[i % stores.len()];
        let clean = random_set(4, &mut rng);
        let mask = random_mask(&mut rng);
        let mut z = clean.z.clone();
        for m in Modality::ALL {
            if !mask.is_kept(m) {
                let junk = match rng.random_range(0..4) {
                    0 => vec![f64::NAN; 4],
                    1 => vec![f64::INFINITY, -1e300, 0.0, 7.0],
                    2 => uniform(&[1, 4], &mut rng).row_vec(0).iter().map(|x| x * 1e6).collect(),
                    _ => vec![0.0; 4],
                };
                z[m.index()] = Some(junk);
            }
        }
        let dirty = EmbeddingSet { z };
        let (a, wa) = gmu_forward(&clean, &mask, store, names).unwrap();
        let (b, wb) = gmu_forward(&dirty, &mask, store, names).unwrap();
        let same = a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            && wa.iter().map(|x| x.to_bits()).eq(wb.iter().map(|x| x.to_bits()));
        let zeros = Modality::ALL.iter().all(|&m| mask.is_kept(m) || wa[m.index()] == 0.0);
        let sum = (wa.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        if !(same && zeros && sum) {
            bad.push(i);
        }
    }
    Outcome::new(bad.is_empty(), format!("1000 pairs, {} violations", bad.len()))
}

// 4

fn ema_schedule() -> Outcome {
    let mut rng = seeded(4);
    let mut teacher = ParamStore::new();
    let mut student = ParamStore::new();
    for (name, shape) in [("gmu.w", [3, 5]), ("head.weight", [2, 3]), ("head.bias", [1, 2])] {
        teacher.insert(format!("teacher.{name}"), uniform(&shape, &mut rng)).unwrap();
        student.insert(format!("student.{name}"), uniform(&shape, &mut rng)).unwrap();
    }
    let dist = |t: &ParamStore| -> f64 {
        t.flatten().iter().zip(student.flatten()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let frozen = student.flatten();
    let (g0, gn, warmup) = (0.99, 0.999, 50u64);
    let mut worst = 0.0f64;
    let mut d = dist(&teacher);
    for step in 0..100u64 {
        let gamma = gamma_schedule(step, g0, gn, warmup);
        ema_update(&mut teacher, &student, gamma).unwrap();
        let next = dist(&teacher);
        worst = worst.max((next / d - gamma).abs() / gamma);
        d = next;
    }
    let ends = [
        (gamma_schedule(0, g0, gn, warmup), g0),
        (gamma_schedule(warmup / 2, g0, gn, warmup), (g0 + gn) / 2.0),
        (gamma_schedule(warmup, g0, gn, warmup), gn),
        (gamma_schedule(warmup + 1, g0, gn, warmup), gn),
        (gamma_schedule(10 * warmup, g0, gn, warmup), gn),
    ];
    let sched_err = ends.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome::new(
        worst <= 1e-12 && sched_err <= 1e-15 && student.flatten() == frozen,
        format!("max relative decay error {worst:.1e} over 100 steps, schedule endpoint error {sched_err:.1e}"),
    )
}

// 5

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let (r, c) = (cost.len(), cost[0].len());
    let transposed: Vec<Vec<f64>>;
    let m = if r <= c {
        cost
    } else {
        transposed = (0..c).map(|j| (0..r).map(|i| cost[i][j]).collect()).collect();
        &transposed
    };
    fn go(m: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == m.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(m[row][j] + go(m, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(m, 0, &mut vec![false; m[0].len()])
}

fn hungarian_oracle() -> Outcome {
    let mut rng = seeded(5);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let cost: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..c).map(|_| if rng.random_bool(0.3) { rng.random_range(0..4) as f64 } else { rng.random_range(-5.0..5.0) }).collect())
            .collect();
        let a = hungarian(&cost);
        let recomputed: f64 = a.row_to_col.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[i][j])).sum();
        let assigned = a.row_to_col.iter().flatten().count();
        let mut cols: Vec<usize> = a.row_to_col.iter().flatten().copied().collect();
        cols.sort_unstable();
        cols.dedup();
        let want = brute_force(&cost);
        if (a.cost - want).abs() > 1e-9 || (recomputed - want).abs() > 1e-9 || assigned != r.min(c) || cols.len() != assigned {
            mismatches += 1;
        }
    }
    let mut relabel_bad = 0;
    for _ in 0..200 {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..6);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let relabelled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = map_clusters(&pred, &gold).unwrap().accuracy(&gold);
        let b = map_clusters(&relabelled, &gold).unwrap().accuracy(&gold);
        if a != b {
            relabel_bad += 1;
        }
    }
    Outcome::new(
        mismatches == 0 && relabel_bad == 0,
        format!("200 matrices, {mismatches} mismatches; 200 relabellings, {relabel_bad} changed accuracy"),
    )
}

// 6

fn pool_schedule(model: &Umd2Model) -> Outcome {
    let log: &[PoolRecord] = &model.log.pools;
    let b = model.cfg.batch_size;
    let bad = log
        .iter()
        .filter(|r| {
            let want = ((10 + 5 * r.pool_epoch) * r.batch / 100).clamp(1, r.batch);
            r.pool != want
        })
        .count();
    let full = log.iter().filter(|r| r.batch == b).collect::<Vec<_>>();
    let first = full.first().map(|r| r.pool);
    let capped = full.iter().any(|r| r.pool == b && (10 + 5 * r.pool_epoch) > 100);
    Outcome::new(
        !log.is_empty() && bad == 0 && first == Some(b / 10) && capped,
        format!("{} logged steps, {bad} off schedule, first pool {first:?} of {b}, cap reached: {capped}", log.len()),
    )
}

// 7

fn harvest_fixture() -> Outcome {
    let run = || -> umd2_core::Result<Outcome> {
        let (dump, malformed) = read_dump(&fixture("dump.jsonl"))?;
        let articles = read_articles(&fixture("articles.jsonl"))?;
        let cfg = HarvestConfig::load(&fixture("config.json"))?;
        let (kept, report) = build_dataset(&dump, malformed, &articles, &cfg)?;
        let want = StageReport {
            entries: 20,
            malformed: 0,
            step1_keyword_matches: 11,
            step2_tweets: 10,
            step3_news_tweets: 8,
            step4_records: 4,
            step4_engagements: 24,
            step4_missing_articles: 1,
            step5_records: 1,
        };
        let lower = HarvestConfig { threshold: cfg.threshold - 1, ..cfg.clone() };
        let (all, _) = build_dataset(&dump, malformed, &articles, &lower)?;
        let size = |id: &str| all.iter().find(|r| r.id == id).map(|r| r.engagements.len());
        let eleven = "https://healthnews.example/2020/03/15/outbreak";
        let ten = "https://dailyreport.example/news/lockdown";
        let kinds = |k: EngagementKind| kept[0].engagements.iter().filter(|e| e.kind == k).count();
        let ok = report == want
            && kept.len() == 1
            && kept[0].id == eleven
            && size(eleven) == Some(11)
            && size(ten) == Some(10)
            && cfg.threshold == 10
            && (kinds(EngagementKind::Tweet), kinds(EngagementKind::Retweet), kinds(EngagementKind::Reply)) == (6, 3, 2);
        Ok(Outcome::new(
            ok,
            format!(
                "steps {}/{}/{}/{}+{} eng/{} kept; 11-engagement record kept, 10-engagement record dropped",
                report.step1_keyword_matches,
                report.step2_tweets,
                report.step3_news_tweets,
                report.step4_records,
                report.step4_engagements,
                report.step5_records
            ),
        ))
    };
    run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")))
}

// 8

fn stats_ratio() -> Outcome {
    let s = DatasetStats::from_counts(419_351, 17_802_652);
    Outcome::new(s.tweets_per_article == Some(42.5), format!("tweets per article {:?}", s.tweets_per_article))
}

// 9-12

fn umd2_config(clusters: usize, seed: u64) -> Umd2Config {
    Umd2Config {
        clusters,
        batch_size: 32,
        learning_rate: 3e-3,
        epochs: 170,
        contrastive_epochs: 150,
        cosine_floor: Some(0.01),
        seed,
        ..Default::default()
    }
}

/// Record ids, embedding sets, gold indices and the raw modality tables.
fn embed(spec: &SyntheticSpec) -> (Vec<String>, Vec<EmbeddingSet>, Vec<usize>, Vec<Vec<Vec<f64>>>) {
    let data = synth_generate(spec).unwrap();
    let mut pcfg = PretrainConfig::default().with_seed(spec.seed);
    pcfg.source.negatives_per_positive = 1;
    let pre = pretrain_all(&data.records, &data.profiles, &data.credibility, &pcfg).unwrap();
    let (ids, sets) = assemble_sets([&pre.tables[0], &pre.tables[1], &pre.tables[2], &pre.tables[3]]).unwrap();
    let rows = pre.tables.iter().map(|t| t.rows.clone()).collect();
    (ids, sets, data.gold_indices(), rows)
}

fn rows_for(ids: &[String], preds: &[umd2_core::umd2::Prediction], labels: Option<&[usize]>) -> Vec<PredictionRow> {
    ids.iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (id, p))| PredictionRow {
            record_id: id.clone(),
            cluster: p.cluster,
            probs: p.probs.clone(),
            label: labels.map(|l| l[i]),
        })
        .collect()
}

fn csv_bytes(dir: &Path, name: &str, rows: &[PredictionRow]) -> Vec<u8> {
    let path = dir.join(name);
    write_predictions(&path, rows).unwrap();
    std::fs::read(path).unwrap()
}

struct DetectionRun {
    model: Umd2Model,
    teacher: (f64, f64),
    student_f1: f64,
    ward_f1: [f64; 4],
    csvs: Vec<Vec<u8>>,
}

fn scored(clusters: &[usize], gold: &[usize]) -> (f64, f64) {
    let mapped = map_clusters(clusters, gold).unwrap();
    let m = metrics(&mapped.labels, gold, Averaging::Binary).unwrap();
    (m.accuracy, m.f1)
}

fn detection_run() -> DetectionRun {
    let spec = SyntheticSpec {
        n: 2000,
        fake_fraction: 0.3,
        informativeness: [0.9, 0.7, 0.8, 0.5],
        noise: 0.2,
        seed: 7,
        ..Default::default()
    };
    let (ids, sets, gold, tables) = embed(&spec);
    let ward_f1 = std::array::from_fn(|k| scored(&agglomerative_ward(&tables[k], 2).unwrap(), &gold).1);
    let model = train_umd2(&sets, &umd2_config(2, 7)).unwrap();
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let teacher = predict(&model, &refs, &vec![ModalityMask::ones(); refs.len()], Network::Teacher).unwrap();
    let early: Vec<EmbeddingSet> =
        sets.iter().map(|s| EmbeddingSet::new([s.z[0].clone(), s.z[1].clone(), None, None]).unwrap()).collect();
    let early_refs: Vec<&EmbeddingSet> = early.iter().collect();
    let early_mask = ModalityMask::new([1.0, 1.0, 0.0, 0.0]).unwrap();
    let student = predict(&model, &early_refs, &vec![early_mask; refs.len()], Network::Student).unwrap();
    let tc: Vec<usize> = teacher.iter().map(|p| p.cluster).collect();
    let sc: Vec<usize> = student.iter().map(|p| p.cluster).collect();
    let dir = tempfile::tempdir().unwrap();
    let csvs = vec![
        csv_bytes(dir.path(), "teacher.csv", &rows_for(&ids, &teacher, None)),
        csv_bytes(dir.path(), "student.csv", &rows_for(&ids, &student, None)),
    ];
    DetectionRun {
        model,
        teacher: scored(&tc, &gold),
        student_f1: scored(&sc, &gold).1,
        ward_f1,
        csvs,
    }
}

struct KshotRun {
    accuracy: Vec<(usize, f64)>,
    csvs: Vec<Vec<u8>>,
}

fn kshot_run() -> KshotRun {
    let spec = SyntheticSpec {
        n: 1500,
        fake_fraction: 0.3,
        n_domains: 3,
        seed: 11,
        ..Default::default()
    };
    let (ids, sets, gold, _) = embed(&spec);
    let refs: Vec<&EmbeddingSet> = sets.iter().collect();
    let dir = tempfile::tempdir().unwrap();
    let mut accuracy = Vec::new();
    let mut csvs = Vec::new();
    for k in [2, 4, 8] {
        let model = train_umd2(&sets, &umd2_config(k, 11)).unwrap();
        let preds = predict(&model, &refs, &vec![ModalityMask::ones(); refs.len()], Network::Teacher).unwrap();
        let clusters: Vec<usize> = preds.iter().map(|p| p.cluster).collect();
        let labels = kshot_assign(&clusters, &majority_oracle(&clusters, &gold)).unwrap();
        let hits = labels.iter().zip(&gold).filter(|(a, b)| a == b).count();
        accuracy.push((k, hits as f64 / gold.len() as f64));
        csvs.push(csv_bytes(dir.path(), &format!("k{k}.csv"), &rows_for(&ids, &preds, Some(&labels))));
    }
    KshotRun { accuracy, csvs }
}

fn end_to_end(run: &DetectionRun) -> Outcome {
    let (acc, f1) = run.teacher;
    let best = run.ward_f1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Outcome::new(
        acc >= 0.90 && f1 >= 0.88 && f1 > best,
        format!(
            "teacher acc {acc:.4} f1 {f1:.4}; single-modality ward f1 s/t/p/u {:.3}/{:.3}/{:.3}/{:.3}",
            run.ward_f1[0], run.ward_f1[1], run.ward_f1[2], run.ward_f1[3]
        ),
    )
}

fn early_detection(run: &DetectionRun) -> Outcome {
    let gap = run.teacher.1 - run.student_f1;
    Outcome::new(
        gap <= 0.10,
        format!("student [1,1,0,0] f1 {:.4} vs teacher {:.4} (gap {gap:.4})", run.student_f1, run.teacher.1),
    )
}

fn few_shot(run: &KshotRun) -> Outcome {
    let a: Vec<f64> = run.accuracy.iter().map(|x| x.1).collect();
    let monotone = a.windows(2).all(|w| w[1] >= w[0]);
    let plateau = a[2] - a[1] <= 0.05;
    let shown: Vec<String> = run.accuracy.iter().map(|(k, v)| format!("k={k}: {v:.4}")).collect();
    Outcome::new(monotone && plateau, format!("{} (last step {:+.4})", shown.join(", "), a[2] - a[1]))
}

fn determinism(a: &DetectionRun, b: &DetectionRun, c: &KshotRun, d: &KshotRun) -> Outcome {
    let files = a.csvs.iter().chain(&c.csvs).zip(b.csvs.iter().chain(&d.csvs));
    let total = a.csvs.len() + c.csvs.len();
    let differing = files.filter(|(x, y)| x != y).count();
    Outcome::new(differing == 0, format!("{total} prediction files, {differing} differ on rerun"))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut emit = |id: usize, name: &'static str, out: Outcome| {
        println!("{} {id:>2} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        results.push((id, name, out));
    };

    emit(1, "closed-form losses", timed(Some(Duration::from_secs(1)), closed_forms));
    emit(2, "gradient suite", timed(Some(Duration::from_secs(120)), gradient_suite));
    emit(3, "masking semantics", timed(None, masking));
    emit(4, "ema and gamma schedule", timed(None, ema_schedule));
    emit(5, "hungarian oracle", timed(Some(Duration::from_secs(30)), hungarian_oracle));

    let t0 = Instant::now();
    let first = detection_run();
    let detect_time = t0.elapsed();
    emit(6, "pool schedule", timed(None, || pool_schedule(&first.model)));
    emit(7, "harvest fixture", timed(None, harvest_fixture));
    emit(8, "dataset statistics", timed(None, stats_ratio));
    let mut e2e = end_to_end(&first);
    if detect_time > Duration::from_secs(600) {
        e2e.pass = false;
        e2e.detail.push_str("; over the 600s budget");
    }
    e2e.detail.push_str(&format!(" [{:.2}s]", detect_time.as_secs_f64()));
    emit(9, "end-to-end detection", e2e);
    emit(10, "early detection", timed(None, || early_detection(&first)));
    let shots = kshot_run();
    emit(11, "few-shot trend", timed(None, || few_shot(&shots)));
    let again = detection_run();
    let shots_again = kshot_run();
    emit(12, "determinism", timed(None, || determinism(&first, &again, &shots, &shots_again)));

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
