//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conceptbank::corpus::Lexicon;
use conceptbank::detect::{
    train_mklsvm, verify_visualness, DetectorConfig, DetectorTrainingProblem, SolverOptions, VisualnessConfig,
};
use conceptbank::encode::{encode_image, train_codebook, DescriptorBlock, ChannelFeatures, Extent, FeatureSet, Pyramid};
use conceptbank::metrics::{average_precision, ranking_ap};
use conceptbank::numeric::SquareMatrix;
use conceptbank::ontology::{CategoryEntry, ConceptBankTree, EventEntry, HierarchyDocument, NodeId, SubcategoryEntry};
use conceptbank::pipeline::{generate_fixture, FixtureSpec, ModelStore, Pipeline, PipelineConfig, Stage};
use conceptbank::retrieve::{fuse, zero_shot_retrieve, RankList, UnlabeledVideos};
use conceptbank::select::{kde_confidence, kde_scores, ConceptImagePool, PoolMember, PositiveStrategy};
use conceptbank::semmatch::{QueryPlan, Selection, SemanticMatcher, SimilarityProvider};
use conceptbank::videorep::RepresentationSet;
use conceptbank::Error;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Dual solver against a brute-force active-set enumeration.

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn qp_objective(q: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += 0.5 * alpha[i] * q[i][j] * alpha[j];
        }
    }
    v - alpha.iter().sum::<f64>()
}

/// Minimum over every {lower, upper, free} assignment whose KKT system has
/// a feasible solution.
fn brute_force_qp(q: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let mut best = f64::INFINITY;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut x = code;
        for s in state.iter_mut() {
            *s = (x % 3) as u8;
            x /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            let f = free.len();
            let mut a = vec![vec![0.0; f + 1]; f + 1];
            let mut b = vec![0.0; f + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[r][s] = q[i][j];
                }
                a[r][f] = y[i];
                a[f][r] = y[i];
                b[r] = 1.0 - (0..n).filter(|&j| state[j] == 1).map(|j| q[i][j] * c).sum::<f64>();
            }
            b[f] = -(0..n).filter(|&j| state[j] == 1).map(|j| y[j] * c).sum::<f64>();
            let Some(sol) = solve_linear(a, b) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let feasible = alpha.iter().all(|&a| (-1e-10..=c + 1e-10).contains(&a))
            && y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-9;
        if feasible {
            best = best.min(qp_objective(q, &alpha));
        }
    }
    best
}

fn kkt_residual(q: &[Vec<f64>], y: &[f64], c: f64, alpha: &[f64]) -> f64 {
    let n = y.len();
    let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>() - 1.0).collect();
    let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let v = -y[i] * g[i];
        let in_up = (y[i] > 0.0 && alpha[i] < c) || (y[i] < 0.0 && alpha[i] > 0.0);
        let in_low = (y[i] < 0.0 && alpha[i] < c) || (y[i] > 0.0 && alpha[i] > 0.0);
        if in_up {
            up = up.max(v);
        }
        if in_low {
            low = low.min(v);
        }
    }
    let bounds = alpha.iter().map(|&a| (-a).max(a - c).max(0.0)).fold(0.0, f64::max);
    let equality = y.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>().abs();
    (up - low).max(0.0).max(bounds).max(equality)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let kernels = rng.random_range(1..=3);
        let grams: Vec<SquareMatrix> = (0..kernels)
            .map(|_| {
                let r = rng.random_range(1..=4);
                let x: Vec<Vec<f64>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
                SquareMatrix::from_fn(n, |i, j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum())
            })
            .collect();
        let raw: Vec<f64> = (0..kernels).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let beta: Vec<f64> = raw.iter().map(|b| b / sum).collect();
        let c = rng.random_range(0.1..5.0);
        let gamma = rng.random_range(0.001..0.1);
        let problem = DetectorTrainingProblem {
            grams: grams.clone(),
            labels: y.clone(),
            c,
            gamma,
        };
        let sol = problem.solve_fixed_beta(&beta, 1e-10, None).map_err(|e| e.to_string())?;
        let q: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let k: f64 = grams.iter().zip(&beta).map(|(g, b)| b * g.get(i, j)).sum();
                        y[i] * y[j] * (k + if i == j { gamma } else { 0.0 })
                    })
                    .collect()
            })
            .collect();
        let optimum = brute_force_qp(&q, &y, c);
        worst_gap = worst_gap.max((qp_objective(&q, &sol.alpha) - optimum).abs());
        worst_kkt = worst_kkt.max(kkt_residual(&q, &y, c, &sol.alpha));
    }
    let elapsed = start.elapsed();
    check(
        worst_gap <= 1e-6 && worst_kkt <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("max objective gap {worst_gap:.2e}, max KKT residual {worst_kkt:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 2. Two-point closed form.

fn criterion_2() -> Outcome {
    let k = SquareMatrix::from_rows(2, vec![1.0, -1.0, -1.0, 1.0]);
    let mut got = Vec::new();
    for (gamma, expected) in [(0.0, 0.5), (0.01, 0.4975)] {
        let problem = DetectorTrainingProblem {
            grams: vec![k.clone()],
            labels: vec![1.0, -1.0],
            c: 1.0,
            gamma,
        };
        let sol = train_mklsvm(&problem, SolverOptions::default()).map_err(|e| e.to_string())?;
        let ok = sol.alpha.iter().all(|a| (a - expected).abs() <= 1e-4);
        got.push((gamma, sol.alpha.clone(), ok));
    }
    check(got.iter().all(|g| g.2), format!("{:?}", got.iter().map(|g| (g.0, g.1.clone())).collect::<Vec<_>>()))
}

// ---------------------------------------------------------------------------
// 3. KDE confidence against a direct triple loop.

fn member(id: String, channels: Vec<Vec<f64>>) -> PoolMember {
    PoolMember {
        image_id: id,
        features: Arc::new(FeatureSet {
            channels: channels
                .into_iter()
                .enumerate()
                .map(|(m, values)| ChannelFeatures { name: format!("c{m}"), values })
                .collect(),
        }),
    }
}

fn direct_kde(features: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let n = features.len();
    let m = features[0].len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let sigma: Vec<f64> = (0..m)
        .map(|c| {
            let mut total = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    total += dist(&features[i][c], &features[j][c]).sqrt();
                    pairs += 1.0;
                }
            }
            let s = total / pairs;
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut p = 0.0;
            for j in 0..n {
                for c in 0..m {
                    p += (-dist(&features[i][c], &features[j][c]) / (sigma[c] * sigma[c])).exp();
                }
            }
            p / (m * n) as f64
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..=4)).collect();
        let features: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| dims.iter().map(|&d| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect())
            .collect();
        let pool = ConceptImagePool::new(
            "c",
            features.iter().enumerate().map(|(i, f)| member(format!("i{i}"), f.clone())).collect(),
        )
        .map_err(|e| e.to_string())?;
        let oracle = direct_kde(&features);
        let batch = kde_scores(&pool);
        for i in 0..n {
            worst = worst.max((kde_confidence(&pool, i) - oracle[i]).abs());
            worst = worst.max((batch[i] - oracle[i]).abs());
        }
    }
    let pool = ConceptImagePool::new(
        "scalar",
        [0.0, 0.0, 10.0].iter().enumerate().map(|(i, &v)| member(format!("s{i}"), vec![vec![v]])).collect(),
    )
    .map_err(|e| e.to_string())?;
    let scalar = kde_scores(&pool);
    let example_ok = (scalar[0] - 0.7018).abs() < 5e-5 && (scalar[1] - 0.7018).abs() < 5e-5 && (scalar[2] - 0.4036).abs() < 5e-5;
    check(
        worst <= 1e-9 && example_ok,
        format!("max deviation {worst:.2e}; [0, 0, 10] -> [{:.4}, {:.4}, {:.4}]", scalar[0], scalar[1], scalar[2]),
    )
}

// ---------------------------------------------------------------------------
// 4. Hierarchical similarity worked example.

fn criterion_4() -> Outcome {
    let doc = HierarchyDocument {
        categories: vec![CategoryEntry {
            name: "animals".into(),
            subcategories: vec![SubcategoryEntry {
                name: "dog care".into(),
                events: vec![EventEntry {
                    name: "grooming a dog".into(),
                    visually_detectable: true,
                    article_names: vec!["dog grooming".into()],
                }],
            }],
        }],
    };
    let mut tree = ConceptBankTree::from_hierarchy(&doc).map_err(|e| e.to_string())?;
    let event = tree.event_by_name("grooming a dog").ok_or("event missing")?.id;
    let brush = tree.attach_concepts(event, &["brush"]).map_err(|e| e.to_string())?[0];
    let lexicon = Lexicon::new(
        ["a".to_string()],
        Vec::<String>::new(),
        [("grooming".to_string(), "groom".to_string()), ("animals".to_string(), "animal".to_string())],
        Vec::<String>::new(),
    )
    .map_err(|e| e.to_string())?;
    let matcher = SemanticMatcher::new(
        SimilarityProvider::from_pairs([("groom", "brush", 0.8), ("dog", "animal", 0.7)]),
        lexicon,
    );
    let factors = matcher.chain_factors("grooming a dog", brush, &tree).map_err(|e| e.to_string())?;
    let s = matcher.hierarchical_sim("grooming a dog", brush, &tree).map_err(|e| e.to_string())?;
    check(
        factors == [0.8, 1.0, 1.0, 0.7] && (s - 0.56).abs() <= 1e-12,
        format!("factors {factors:?}, S = {s}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Rank fusion.

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn check_fusion(ids: &[String], lists: &[Vec<usize>]) -> Result<(), String> {
    let n = ids.len();
    let d = lists.len();
    let rank_lists: Vec<RankList> = lists
        .iter()
        .enumerate()
        .map(|(j, order)| RankList {
            concept: format!("c{j}"),
            ordering: order.iter().map(|&i| ids[i].clone()).collect(),
            scores: (0..n).map(|r| (n - r) as f64).collect(),
        })
        .collect();
    let fused = fuse(&rank_lists).map_err(|e| e.to_string())?;
    let mut expected: Vec<(usize, f64, &String)> = (0..n)
        .map(|i| {
            let ranks: Vec<usize> = lists.iter().map(|o| o.iter().position(|&x| x == i).unwrap() + 1).collect();
            let numer: usize = ranks.iter().map(|&r| n - r).sum();
            let formula: f64 = ranks.iter().map(|&r| 1.0 - r as f64 / n as f64).sum::<f64>() / d as f64;
            (numer, formula, &ids[i])
        })
        .collect();
    expected.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.2.cmp(b.2)));
    for (got, (numer, formula, id)) in fused.ranking.iter().zip(&expected) {
        let exact = *numer as f64 / (d * n) as f64;
        if &got.video_id != *id || got.score != exact || (got.score - formula).abs() > 1e-12 {
            return Err(format!("n={n} d={d}: {} {} vs {id} {exact}", got.video_id, got.score));
        }
    }
    Ok(())
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0usize;
    for n in 1..=6 {
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let perms = permutations(n);
        for d in 1..=4 {
            let exhaustive = (perms.len() as f64).powi(d) <= 50_000.0;
            if exhaustive {
                let total = perms.len().pow(d as u32);
                for code in 0..total {
                    let mut x = code;
                    let lists: Vec<Vec<usize>> = (0..d)
                        .map(|_| {
                            let p = perms[x % perms.len()].clone();
                            x /= perms.len();
                            p
                        })
                        .collect();
                    check_fusion(&ids, &lists)?;
                    cases += 1;
                }
            } else {
                for first in &perms {
                    let mut lists = vec![first.clone()];
                    for _ in 1..d {
                        lists.push(perms[rng.random_range(0..perms.len())].clone());
                    }
                    check_fusion(&ids, &lists)?;
                    cases += 1;
                }
            }
        }
    }
    let mut invariant = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=5);
        let ids: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
        let scores: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let plain: Vec<RankList> = scores.iter().enumerate().map(|(j, s)| RankList::from_scores(format!("c{j}"), &ids, s)).collect();
        let warped: Vec<RankList> = scores
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let t: Vec<f64> = s.iter().map(|&x| (3.0 * x).exp() + x.powi(3) * (j as f64 + 1.0) - 7.0).collect();
                RankList::from_scores(format!("c{j}"), &ids, &t)
            })
            .collect();
        let a = fuse(&plain).map_err(|e| e.to_string())?;
        let b = fuse(&warped).map_err(|e| e.to_string())?;
        if a == b {
            invariant += 1;
        }
    }
    check(invariant == 100, format!("{cases} exhaustive cases exact, {invariant}/100 transform-invariant"))
}

// ---------------------------------------------------------------------------
// 6. Average precision.

fn oracle_ap(rel: &[bool]) -> f64 {
    let relevant = rel.iter().filter(|&&r| r).count();
    let mut total = 0.0;
    for k in 0..rel.len() {
        if rel[k] {
            let hits = rel[..=k].iter().filter(|&&r| r).count();
            total += hits as f64 / (k + 1) as f64;
        }
    }
    total / relevant as f64
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=60);
        let p = rng.random_range(0.05..0.9);
        let mut rel: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p).collect();
        if !rel.iter().any(|&r| r) {
            rel[rng.random_range(0..n)] = true;
        }
        if average_precision(&rel).map_err(|e| e.to_string())? != oracle_ap(&rel) {
            mismatches += 1;
        }
    }
    let mut rel: Vec<bool> = (0..400).map(|i| i < 100).collect();
    let mut total = 0.0;
    for _ in 0..1000 {
        rel.shuffle(&mut rng);
        total += average_precision(&rel).map_err(|e| e.to_string())?;
    }
    let mean = total / 1000.0;
    check(
        mismatches == 0 && (mean - 0.25).abs() <= 0.02,
        format!("{mismatches} oracle mismatches in 1000; random-ranking AP {mean:.4} vs prevalence 0.25"),
    )
}

// ---------------------------------------------------------------------------
// 7. Visualness gate.

fn gaussian_members(prefix: &str, count: usize, shift: f64, rng: &mut ChaCha8Rng) -> Vec<PoolMember> {
    (0..count)
        .map(|i| {
            let values: Vec<f64> = (0..10)
                .map(|d| if d < 3 { shift } else { 0.0 } + rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            member(format!("{prefix}{i}"), vec![values])
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let config = VisualnessConfig {
        cv_ap_threshold: 0.8,
        min_training_images: 100,
        detector: DetectorConfig::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let negatives = gaussian_members("n", 300, 0.0, &mut rng);
    let positives = gaussian_members("p", 120, 2.5, &mut rng);
    let separable = verify_visualness("separable", &positives, &negatives, &config, 1).map_err(|e| e.to_string())?;
    let small = verify_visualness("small", &positives[..99], &negatives, &config, 1).map_err(|e| e.to_string())?;
    let mut shuffled_fail = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut pool = gaussian_members("x", 120, 2.5, &mut rng);
        pool.extend(gaussian_members("y", 240, 0.0, &mut rng));
        pool.shuffle(&mut rng);
        let (pos, neg) = pool.split_at(120);
        let r = verify_visualness("shuffled", pos, neg, &config, seed).map_err(|e| e.to_string())?;
        if !r.pass {
            shuffled_fail += 1;
        }
    }
    check(
        separable.pass && separable.cv_ap > 0.8 && !small.pass && shuffled_fail >= 48,
        format!(
            "separable cv_ap {:.3} pass={}; 99 images cv_ap {:.3} pass={}; shuffled failed {shuffled_fail}/50",
            separable.cv_ap, separable.pass, small.cv_ap, small.pass
        ),
    )
}

// ---------------------------------------------------------------------------
// 8 and 9. Pipeline on the synthetic fixture.

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let path = entry.unwrap().path();
        let target = to.join(path.file_name().unwrap());
        if path.is_dir() {
            copy_tree(&path, &target);
        } else {
            fs::copy(&path, &target).unwrap();
        }
    }
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn run_pipeline(config: &PipelineConfig, store: &Path) -> Result<Pipeline, Error> {
    let p = Pipeline::new(ModelStore::open(store)?, config.clone());
    p.run_all()?;
    Ok(p)
}

struct Retrieval {
    set: RepresentationSet,
    plans: Vec<QueryPlan>,
}

impl Retrieval {
    fn load(p: &Pipeline) -> Result<Self, Error> {
        Ok(Retrieval {
            set: p.representations("test")?.ok_or(Error::MissingUpstream("represent".into()))?,
            plans: p.plans()?,
        })
    }
}

fn zero_shot_map(set: &RepresentationSet, plans: &[QueryPlan], labels: &BTreeMap<String, String>) -> Result<f64, Error> {
    let videos = UnlabeledVideos::new(set.clone());
    let mut ids = videos.video_ids();
    ids.sort();
    let mut total = 0.0;
    for plan in plans {
        let ordering: Vec<String> = match zero_shot_retrieve(plan, &videos) {
            Ok(r) => r.ordering().iter().map(|s| s.to_string()).collect(),
            Err(Error::QueryUnmatched(_)) => ids.clone(),
            Err(e) => return Err(e),
        };
        total += ranking_ap(&ordering, &|id| labels.get(id) == Some(&plan.query))?;
    }
    Ok(total / plans.len() as f64)
}

fn truncated(plans: &[QueryPlan], n: usize) -> Vec<QueryPlan> {
    plans
        .iter()
        .map(|p| QueryPlan {
            query: p.query.clone(),
            n,
            selections: p.selections.iter().take(n).cloned().collect(),
        })
        .collect()
}

fn random_concept_plans(plans: &[QueryPlan], concepts: &[String], seed: u64) -> Vec<QueryPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plans
        .iter()
        .map(|p| {
            let size = p.selections.iter().filter(|s| s.score > 0.0).count();
            let mut pool = concepts.to_vec();
            pool.shuffle(&mut rng);
            let selections = pool
                .into_iter()
                .take(size)
                .map(|key| {
                    let (event, name) = key.split_once('/').unwrap();
                    Selection {
                        concept: NodeId(0),
                        event: event.into(),
                        name: name.into(),
                        score: 1.0,
                    }
                })
                .collect();
            QueryPlan {
                query: p.query.clone(),
                n: size,
                selections,
            }
        })
        .collect()
}

/// Reruns selection through retrieval on a copy of a finished store.
fn rerun_from_select(base: &Path, dir: &Path, config: &PipelineConfig) -> Result<Retrieval, Error> {
    copy_tree(base, dir);
    let p = Pipeline::new(ModelStore::open(dir)?, config.clone());
    for stage in [Stage::Select, Stage::Verify, Stage::Train, Stage::Match, Stage::Represent] {
        p.run(stage)?;
    }
    Retrieval::load(&p)
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PipelineConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("fixture");
    let layout = generate_fixture(&FixtureSpec::default(), &root).unwrap();
    let config = PipelineConfig::load(&layout.config).unwrap();
    Fixture { _dir: dir, root, config }
}

fn criterion_8(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let work = fx.root.parent().unwrap().join("c8");
    let base = work.join("base");
    let p = run_pipeline(&fx.config, &base).map_err(|e| e.to_string())?;
    let labels = p.test_labels().map_err(|e| e.to_string())?;
    let summary = p.eval_summary().map_err(|e| e.to_string())?;
    let zero_shot = summary.zero_shot.map;
    let supervised = summary.supervised.as_ref().map(|s| s.map).unwrap_or(0.0);
    let retrieval = Retrieval::load(&p).map_err(|e| e.to_string())?;
    let events: Vec<&String> = retrieval.plans.iter().map(|p| &p.query).collect();
    let prevalence = events
        .iter()
        .map(|e| labels.values().filter(|l| l == e).count() as f64 / labels.len() as f64)
        .sum::<f64>()
        / events.len() as f64;

    let mut semantic_wins = 0;
    let mut kde_wins = 0;
    let sizes = [2usize, 4, 8, 12];
    let mut by_size = [0.0f64; 4];
    let mut lines = Vec::new();
    for i in 0..10u64 {
        let mut kde_config = fx.config.clone();
        kde_config.seeds.select = 1000 + i;
        let mut random_config = kde_config.clone();
        random_config.positive_strategy = PositiveStrategy::Random;
        let kde = rerun_from_select(&base, &work.join(format!("kde{i}")), &kde_config).map_err(|e| e.to_string())?;
        let random = rerun_from_select(&base, &work.join(format!("random{i}")), &random_config).map_err(|e| e.to_string())?;
        let kde_map = zero_shot_map(&kde.set, &kde.plans, &labels).map_err(|e| e.to_string())?;
        let random_map = zero_shot_map(&random.set, &random.plans, &labels).map_err(|e| e.to_string())?;
        let rc_plans = random_concept_plans(&kde.plans, &kde.set.concepts, 2000 + i);
        let rc_map = zero_shot_map(&kde.set, &rc_plans, &labels).map_err(|e| e.to_string())?;
        semantic_wins += usize::from(kde_map > rc_map);
        kde_wins += usize::from(kde_map > random_map);
        for (slot, &n) in by_size.iter_mut().zip(&sizes) {
            *slot += zero_shot_map(&kde.set, &truncated(&kde.plans, n), &labels).map_err(|e| e.to_string())? / 10.0;
        }
        lines.push(format!("seed {i}: kde {kde_map:.3} random-images {random_map:.3} random-concepts {rc_map:.3}"));
        fs::remove_dir_all(work.join(format!("kde{i}"))).ok();
        fs::remove_dir_all(work.join(format!("random{i}"))).ok();
    }
    let elapsed = start.elapsed();
    let a = zero_shot >= 3.0 * prevalence;
    let b = supervised >= zero_shot;
    let c = semantic_wins >= 9;
    let d = kde_wins >= 8;
    let e = by_size.windows(2).all(|w| w[1] >= w[0]);
    let time_ok = elapsed < Duration::from_secs(300);
    for l in &lines {
        println!("    {l}");
    }
    check(
        a && b && c && d && e && time_ok,
        format!(
            "a: zero-shot {zero_shot:.3} vs 3x prevalence {:.3} [{}]; b: supervised {supervised:.3} [{}]; \
             c: semantic beats random concepts {semantic_wins}/10 [{}]; d: kde beats random images {kde_wins}/10 [{}]; \
             e: mAP by size {:?} [{}]; {:.1}s",
            3.0 * prevalence,
            pass(a),
            pass(b),
            pass(c),
            pass(d),
            by_size.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            pass(e),
            elapsed.as_secs_f64()
        ),
    )
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn criterion_9(fx: &Fixture) -> Outcome {
    let work = fx.root.parent().unwrap().join("c9");
    let other = work.join("fixture-copy");
    let layout = generate_fixture(&FixtureSpec::default(), &other).map_err(|e| e.to_string())?;
    let other_config = PipelineConfig::load(&layout.config).map_err(|e| e.to_string())?;
    let runs = [(&fx.config, 1usize, "a"), (&fx.config, 4, "b"), (&other_config, 1, "c"), (&other_config, 4, "d")];
    let mut trees = Vec::new();
    for (config, workers, name) in runs {
        let mut config = config.clone();
        config.workers = workers;
        let store = work.join(name);
        run_pipeline(&config, &store).map_err(|e| e.to_string())?;
        trees.push(tree_bytes(&store));
    }
    let identical = trees.windows(2).all(|w| w[0] == w[1]);
    let eval = PathBuf::from("reports/eval.json");
    let eval_same = trees.iter().all(|t| t.get(&eval) == trees[0].get(&eval) && t.contains_key(&eval));
    check(
        identical && eval_same,
        format!("{} store files compared over 4 runs (workers 1 and 4, two fixture copies)", trees[0].len()),
    )
}

// ---------------------------------------------------------------------------
// 10. Encoding shape.

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dim = 8;
    let channels = ["shape", "color"];
    let codebooks = channels
        .iter()
        .map(|ch| {
            let data: Vec<f64> = (0..2500 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            train_codebook(ch, &data, dim, 1000, 3)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let pyramid = Pyramid::standard();
    let mut worst = 0.0f64;
    let mut shapes_ok = true;
    let mut empty_seen = 0;
    for img in 0..20 {
        let extent = Extent::new(200.0, 120.0);
        // Some images cover only the left part, leaving blocks empty.
        let max_x = if img % 3 == 0 { 90.0 } else { 200.0 };
        let count = rng.random_range(5..60);
        let positions: Vec<(f32, f32)> = (0..count)
            .map(|_| (rng.random_range(0.0..max_x) as f32, rng.random_range(0.0..120.0) as f32))
            .collect();
        let blocks: Vec<DescriptorBlock> = channels
            .iter()
            .map(|ch| {
                let v: Vec<f32> = (0..count * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                DescriptorBlock::new(*ch, dim, positions.clone(), v).unwrap()
            })
            .collect();
        let features = encode_image(&blocks, &codebooks, extent, &pyramid, 5).map_err(|e| e.to_string())?;
        let mut occupied = vec![false; pyramid.block_count()];
        for &(x, y) in &positions {
            for b in pyramid.blocks_containing(f64::from(x), f64::from(y), extent) {
                occupied[b] = true;
            }
        }
        for ch in &features.channels {
            shapes_ok &= ch.values.len() == 8000;
            for (b, block) in ch.values.chunks(1000).enumerate() {
                let sum: f64 = block.iter().sum();
                if occupied[b] {
                    worst = worst.max((sum - 1.0).abs());
                } else {
                    empty_seen += 1;
                    shapes_ok &= sum == 0.0;
                }
            }
        }
    }
    check(
        shapes_ok && worst <= 1e-9,
        format!("every channel 8000 dims: {shapes_ok}; max |block sum - 1| {worst:.2e}; {empty_seen} empty blocks"),
    )
}

fn main() {
    let fx = fixture();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 dual solver matches brute-force optimum", Box::new(criterion_1)),
        ("2 two-point closed form", Box::new(criterion_2)),
        ("3 KDE matches direct evaluation", Box::new(criterion_3)),
        ("4 hierarchical similarity worked example", Box::new(criterion_4)),
        ("5 rank fusion", Box::new(criterion_5)),
        ("6 average precision", Box::new(criterion_6)),
        ("7 visualness gate", Box::new(criterion_7)),
        ("8 synthetic end-to-end orderings", Box::new(|| criterion_8(&fx))),
        ("9 determinism", Box::new(|| criterion_9(&fx))),
        ("10 encoding shape", Box::new(criterion_10)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.split(' ').next() == Some(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(_) => Err("panicked".into()),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
