//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pmsm::eval::{evaluate_embeddings, ReportLabel};
use pmsm::embedding::{loss_and_gradients, ModelArch, PmsmParams, StreamArch, Views};
use pmsm::image::{Image, LabeledImage};
use pmsm::loss::{DistanceKind, IndexTriplet};
use pmsm::dataset::{build_retrieval_split, Dataset, EvalSplit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// One patch sample: feature, model, identity.
pub type Sample = (Vec<f64>, u64, u64);

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for i in 0..m.len() {
            m[i] += r[i] / rows.len() as f64;
        }
    }
    m
}

fn classes<'a>(all: &[&'a Sample], key: fn(&Sample) -> u64) -> Vec<(u64, Vec<&'a Vec<f64>>)> {
    let mut out: Vec<(u64, Vec<&Vec<f64>>)> = Vec::new();
    for s in all {
        match out.iter_mut().find(|(c, _)| *c == key(s)) {
            Some((_, v)) => v.push(&s.0),
            None => out.push((key(s), vec![&s.0])),
        }
    }
    out
}

pub fn model_of(s: &Sample) -> u64 {
    s.1
}

pub fn identity_of(s: &Sample) -> u64 {
    s.2
}

/// Unfloored (numerator, denominator) of the averaged class-contrast score,
/// or None when only one model is present.
pub fn eq1_oracle(seed: &Sample, neighbors: &[Sample]) -> Option<(f64, f64)> {
    let all: Vec<&Sample> = std::iter::once(seed).chain(neighbors).collect();
    let groups = classes(&all, model_of);
    if groups.len() < 2 {
        return None;
    }
    let every: Vec<&Vec<f64>> = all.iter().map(|s| &s.0).collect();
    let global = mean_of(&every);
    let mut num = 0.0;
    let mut den = 0.0;
    for (_, members) in &groups {
        let m = mean_of(members);
        num += l2(&m, &global);
        for f in members {
            den += l2(f, &m);
        }
    }
    Some((num, den))
}

/// Nearest other class mean over the farthest same-class neighbour of the seed.
pub fn nearest_class_oracle(seed: &Sample, neighbors: &[Sample], key: fn(&Sample) -> u64) -> Option<(f64, f64)> {
    let all: Vec<&Sample> = std::iter::once(seed).chain(neighbors).collect();
    let groups = classes(&all, key);
    let own = key(seed);
    let own_members = &groups.iter().find(|(c, _)| *c == own)?.1;
    if own_members.len() < 2 || groups.len() < 2 {
        return None;
    }
    let own_mean = mean_of(own_members);
    let mut num = f64::INFINITY;
    for (c, members) in &groups {
        if *c != own {
            num = num.min(l2(&mean_of(members), &own_mean));
        }
    }
    let mut den: f64 = 0.0;
    for n in neighbors {
        if key(n) == own {
            den = den.max(l2(&n.0, &seed.0));
        }
    }
    Some((num, den))
}

pub fn floored(parts: (f64, f64), eps: f64) -> f64 {
    parts.0 / parts.1.max(eps)
}

/// For every anchor with a positive and a negative: farthest positive and
/// nearest negative, found by scanning all (positive, negative) pairs.
pub fn batch_hard_oracle(emb: &[Vec<f64>], labels: &[u64]) -> Vec<IndexTriplet> {
    let mut out = Vec::new();
    for a in 0..emb.len() {
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for p in 0..emb.len() {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..emb.len() {
                if labels[n] == labels[a] {
                    continue;
                }
                let (dp, dn) = (l2(&emb[a], &emb[p]), l2(&emb[a], &emb[n]));
                // larger d_ap, then smaller d_an, then lower indices
                let better = match best {
                    None => true,
                    Some((bp, bn, ip, inn)) => {
                        dp > bp || (dp == bp && (dn < bn || (dn == bn && (p, n) < (ip, inn))))
                    }
                };
                if better {
                    best = Some((dp, dn, p, n));
                }
            }
        }
        if let Some((_, _, p, n)) = best {
            out.push(IndexTriplet {
                anchor: a,
                positive: p,
                negative: n,
            });
        }
    }
    out
}

/// Gallery ids by ascending (distance, id).
pub fn order_oracle(probe: &[f64], gallery: &[(u64, Vec<f64>)]) -> Vec<u64> {
    let mut v: Vec<(f64, u64)> = gallery.iter().map(|(id, g)| (l2(probe, g), *id)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.into_iter().map(|(_, id)| id).collect()
}

/// Average precision from precision@k computed by recounting each prefix.
pub fn ap_oracle(order: &[u64], relevant: &BTreeSet<u64>) -> f64 {
    let mut total = 0.0;
    for k in 1..=order.len() {
        if relevant.contains(&order[k - 1]) {
            let hits = order[..k].iter().filter(|id| relevant.contains(id)).count();
            total += hits as f64 / k as f64;
        }
    }
    total / relevant.iter().filter(|id| order.contains(id)).count() as f64
}

pub fn hit_within(order: &[u64], relevant: &BTreeSet<u64>, k: usize) -> bool {
    order.iter().take(k).any(|id| relevant.contains(id))
}

/// 1×1-pixel images: `per_identity[i]` images for identity `i`, two identities per model.
pub fn label_dataset(per_identity: &[usize]) -> Dataset {
    let mut images = Vec::new();
    for (identity, &n) in per_identity.iter().enumerate() {
        for _ in 0..n {
            images.push(LabeledImage {
                pixels: Image::new(1, 1),
                model_id: identity as u64 / 2,
                identity_id: identity as u64,
                source_id: images.len() as u64,
            });
        }
    }
    Dataset::new(images).unwrap()
}

/// A random retrieval split over up to `max_ids` identities of 2 to 4 images,
/// with small-integer 2-d embeddings so distance ties occur.
pub fn random_eval_instance(r: &mut ChaCha8Rng, max_ids: u64) -> (Dataset, EvalSplit, BTreeMap<u64, Vec<f64>>) {
    let ids = r.random_range(2..=max_ids) as usize;
    let counts: Vec<usize> = (0..ids).map(|_| r.random_range(2..=4)).collect();
    let ds = label_dataset(&counts);
    let split = build_retrieval_split(&ds, r.random_range(1..=ids), r.random()).unwrap();
    let emb = ds
        .ids()
        .map(|id| (id, (0..2).map(|_| r.random_range(-2..=2) as f64).collect()))
        .collect();
    (ds, split, emb)
}

/// Compares the report for `split` with the brute-force mAP and CMC@1..=20,
/// and checks CMC monotonicity and saturation.
pub fn check_metrics(ds: &Dataset, split: &EvalSplit, emb: &BTreeMap<u64, Vec<f64>>) -> Result<(), String> {
    let ks: Vec<usize> = (1..=20).collect();
    let rep = evaluate_embeddings(ds, split, emb, &ks, &ReportLabel::default()).map_err(|e| e.to_string())?;
    let gallery: Vec<(u64, Vec<f64>)> = split.gallery.iter().map(|&g| (g, emb[&g].clone())).collect();
    let mut ap_sum = 0.0;
    let mut hits = vec![0usize; ks.len()];
    for &p in &split.probe {
        let identity = ds.get(p).unwrap().identity_id;
        let relevant: BTreeSet<u64> = split
            .gallery
            .iter()
            .copied()
            .filter(|&g| ds.get(g).unwrap().identity_id == identity)
            .collect();
        let order = order_oracle(&emb[&p], &gallery);
        ap_sum += ap_oracle(&order, &relevant);
        for (i, &k) in ks.iter().enumerate() {
            hits[i] += hit_within(&order, &relevant, k) as usize;
        }
    }
    let n = split.probe.len() as f64;
    if (rep.map - ap_sum / n).abs() > 1e-9 {
        return Err(format!("mAP {} vs oracle {}", rep.map, ap_sum / n));
    }
    for (i, &k) in ks.iter().enumerate() {
        let want = hits[i] as f64 / n;
        if (rep.cmc_at(k).unwrap() - want).abs() > 1e-9 {
            return Err(format!("CMC@{k} {:?} vs oracle {want}", rep.cmc_at(k)));
        }
    }
    let cmc: Vec<f64> = rep.cmc.values().copied().collect();
    if !cmc.windows(2).all(|w| w[0] <= w[1]) {
        return Err(format!("CMC not monotone: {cmc:?}"));
    }
    if split.gallery.len() <= 20 && rep.cmc_at(split.gallery.len()) != Some(1.0) {
        return Err("CMC at the gallery size is below 1".into());
    }
    Ok(())
}

/// A random small model with its parameters nudged off zero so no ReLU sits on a kink.
pub fn random_small_model(r: &mut ChaCha8Rng) -> PmsmParams {
    let depth = r.random_range(1..=2);
    let channels: Vec<usize> = (0..depth).map(|_| r.random_range(1..=3)).collect();
    let stream = StreamArch::simple(8, &channels, r.random_range(2..=4), r.random_bool(0.5));
    let embed = r.random_range(2..=4);
    let arch = if r.random_bool(0.75) {
        ModelArch::pmsm(stream, embed)
    } else {
        ModelArch::whole_only(stream, embed)
    };
    let mut p = PmsmParams::init(&arch, r.random()).unwrap();
    for t in p.tensors_mut() {
        for v in &mut t.data {
            *v += r.random_range(-0.2..0.2);
        }
    }
    p
}

pub fn random_views(r: &mut ChaCha8Rng, px: usize, n: usize) -> Vec<Views> {
    let len = 3 * px * px;
    let mut gen = || (0..len).map(|_| r.random_range(0.0..1.0)).collect::<Vec<f64>>();
    (0..n)
        .map(|_| Views {
            whole: gen(),
            part_m: gen(),
            part_i: gen(),
        })
        .collect()
}

pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where a ±h step crossed a ReLU or hinge kink.
    pub skipped: usize,
}

/// Central differences against the analytic gradient, coordinate by coordinate.
/// Relative error is `|a − f| / max(|a|, |f|, floor)`.
pub fn grad_check(
    params: &PmsmParams,
    batch: &[Views],
    triplets: &[IndexTriplet],
    margin: f64,
    kind: DistanceKind,
    h: f64,
    floor: f64,
) -> GradCheck {
    let base = loss_and_gradients(params, batch, triplets, margin, kind).unwrap();
    let analytic = base.grads.flatten();
    let mut probe = params.clone();
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut flat_index = 0;
    let sizes: Vec<usize> = params.tensors().map(|t| t.data.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors().nth(ti).unwrap().data[j];
            let mut eval = |v: f64| {
                probe.tensors_mut().nth(ti).unwrap().data[j] = v;
                loss_and_gradients(&probe, batch, triplets, margin, kind).unwrap()
            };
            let plus = eval(orig + h);
            let minus = eval(orig - h);
            probe.tensors_mut().nth(ti).unwrap().data[j] = orig;
            let a = analytic[flat_index];
            flat_index += 1;
            if plus.signature != base.signature || minus.signature != base.signature {
                out.skipped += 1;
                continue;
            }
            let fd = (plus.loss - minus.loss) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            out.max_rel = out.max_rel.max(rel);
            out.checked += 1;
        }
    }
    out
}

/// Random instance for the scoring oracle: a seed plus up to 9 neighbours over
/// few models and identities, integer-ish features so ties and duplicates occur.
pub fn random_score_instance(r: &mut ChaCha8Rng, dim: usize, same_model: bool) -> (Sample, Vec<Sample>) {
    let feat = |r: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                if r.random_bool(0.3) {
                    r.random_range(0..4) as f64
                } else {
                    r.random_range(-2.0..2.0)
                }
            })
            .collect()
    };
    let pick = |r: &mut ChaCha8Rng| -> (u64, u64) {
        let model = if same_model { 0 } else { r.random_range(0..3) };
        (model, model * 10 + r.random_range(0..3))
    };
    let (m, i) = pick(r);
    let seed = (feat(r), m, i);
    let k = r.random_range(1..=9);
    let neighbors = (0..k)
        .map(|_| {
            let (m, i) = pick(r);
            (feat(r), m, i)
        })
        .collect();
    (seed, neighbors)
}

/// CPU seconds (user + system) used by this process so far.
pub fn cpu_seconds() -> f64 {
    let mut u: libc::rusage = unsafe { std::mem::zeroed() };
    // SAFETY: getrusage only writes into the struct we pass
    unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut u) };
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    tv(u.ru_utime) + tv(u.ru_stime)
}
