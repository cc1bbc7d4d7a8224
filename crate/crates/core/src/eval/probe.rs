//! Out-of-domain target prediction and input-gradient saliency.

use serde::Serialize;

use crate::affinity::{experiential_scores, fuse, gate, generalized_scores, AffinityQuery, AffinityScores};
use crate::error::{LoatError, Result};
use crate::maps::MetricMap;
use crate::nn::{kernels, Module, Tape, Tensor};
use crate::policy::episode::{Gamma, Mode, Modules};
use crate::policy::guidance_ratio;
use crate::policy::TargetPredictor;
use crate::sim::agent::{FusionContext, TEMPORAL_DIM};
use crate::sim::{Cell, Scene};

/// Fully observed semantic map of a scene's vocabulary objects.
pub fn scene_semantic_map(scene: &Scene) -> Result<MetricMap> {
    let mut map = MetricMap::zeros(scene.vocabulary().to_vec(), scene.size, scene.size)?;
    for (c, name) in scene.vocabulary().iter().enumerate() {
        for &(r, col) in scene.cells_of(name) {
            map.set(c, r, col, 1.0);
        }
    }
    Ok(map)
}

/// Context for a static, fully observed map with no trajectory history.
fn static_context(map: &MetricMap) -> FusionContext {
    let n = map.height() * map.width();
    let mut temporal = vec![0.0; TEMPORAL_DIM];
    temporal[1] = 1.0;
    let mut env = vec![1.0; n];
    env.extend(std::iter::repeat(0.0).take(n));
    FusionContext {
        temporal,
        environmental: Tensor::new(vec![2, map.height(), map.width()], env).expect("shape matches"),
    }
}

/// Scores for `target` over the map's channels under `mode`.
pub fn static_scores(map: &MetricMap, target: &str, modules: Modules<'_>, mode: Mode) -> Result<(AffinityScores, Option<f64>)> {
    let query = AffinityQuery::new(target, map.channels().to_vec())?;
    let a_e = experiential_scores(modules.experiential, modules.embeddings, &query)?;
    let a_g = generalized_scores(modules.gtable, &query);
    Ok(match mode {
        Mode::LoatAvg(Gamma::Fixed(g)) => (fuse(g, &a_g, &a_e)?, Some(g)),
        Mode::LoatAvg(Gamma::Dynamic) => {
            let net = modules
                .fusion
                .ok_or_else(|| LoatError::InvalidArgument("dynamic mode needs a fusion network".into()))?;
            let g = guidance_ratio(net, &static_context(map))?;
            (fuse(g, &a_g, &a_e)?, Some(g))
        }
        Mode::LoatMul => (gate(modules.gtable, &query, &a_e), None),
        Mode::ExperientialOnly => (a_e, None),
        Mode::GeneralizedOnly => (a_g, None),
        Mode::Uniform => (AffinityScores::uniform(query.len()), None),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodRecord {
    pub map_index: usize,
    pub target: String,
    pub argmax: Cell,
    pub nearest_object: Option<String>,
    pub distance: f64,
    pub hit: bool,
    pub gamma: Option<f64>,
}

/// `floor(R / 15)` cells.
pub fn ood_threshold(grid_size: usize) -> usize {
    grid_size / 15
}

/// Stored object nearest (Euclidean) to `cell`; ties go to the lower channel, then row-major order.
pub fn nearest_object(map: &MetricMap, cell: Cell) -> Option<(String, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for c in 0..map.channels().len() {
        for (i, &v) in map.channel(c).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (r, col) = (i / map.width(), i % map.width());
            let d = ((r as f64 - cell.0 as f64).powi(2) + (col as f64 - cell.1 as f64).powi(2)).sqrt();
            if best.is_none_or(|b| d < b.1) {
                best = Some((c, d));
            }
        }
    }
    best.map(|(c, d)| (map.channels()[c].clone(), d))
}

/// Argmax of the predicted distribution on each fully observed map, and whether
/// the nearest stored object is relevant to the target and within `floor(R/15)`.
pub fn ood_predict(maps: &[MetricMap], targets: &[String], modules: Modules<'_>, mode: Mode) -> Result<Vec<OodRecord>> {
    let mut out = Vec::with_capacity(maps.len() * targets.len());
    for (map_index, map) in maps.iter().enumerate() {
        if map.height() != map.width() {
            return Err(LoatError::InvalidArgument("ood maps must be square".into()));
        }
        let limit = ood_threshold(map.height()) as f64;
        let mask = vec![1.0; map.height() * map.width()];
        for target in targets {
            let (scores, gamma) = static_scores(map, target, modules, mode)?;
            let probs = crate::policy::predict_target(&map.activate(&scores)?, &mask, modules.predictor)?;
            let arg = kernels::argmax(&probs);
            let argmax = (arg / map.width(), arg % map.width());
            let near = nearest_object(map, argmax);
            let hit = near
                .as_ref()
                .is_some_and(|(o, d)| *d <= limit && modules.gtable.is_relevant(o, target));
            out.push(OodRecord {
                map_index,
                target: target.clone(),
                argmax,
                distance: near.as_ref().map_or(f64::INFINITY, |n| n.1),
                nearest_object: near.map(|n| n.0),
                hit,
                gamma,
            });
        }
    }
    Ok(out)
}

pub fn hit_rate(records: &[OodRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.hit).count() as f64 / records.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Channel-sum of |gradient|, min-max normalized.
    pub grid: Vec<f64>,
    /// Mean |gradient| per map channel.
    pub saliency: Vec<f64>,
    pub argmax: usize,
    /// All gradient sums were equal; `grid` is flat zeros.
    pub degenerate: bool,
}

/// Gradient of the log-probability at the predicted argmax cell with respect
/// to the raw map, taken through the channel-wise activation by `scores`.
pub fn attention_heatmap(
    predictor: &TargetPredictor,
    raw: &MetricMap,
    scores: &AffinityScores,
    observed_mask: &[f64],
) -> Result<Heatmap> {
    let (h, w) = (raw.height(), raw.width());
    let m = raw.channels().len();
    if observed_mask.len() != h * w {
        return Err(LoatError::DimensionMismatch {
            expected: h * w,
            found: observed_mask.len(),
            context: "observed mask".into(),
        });
    }
    let mut tape = Tape::new();
    let vars = predictor.bind(&mut tape);
    let x = tape.leaf(raw.grid().clone());
    let s = tape.leaf(scores.to_tensor());
    let act = tape.channel_scale(x, s)?;
    let mask = tape.leaf(Tensor::new(vec![1, h, w], observed_mask.to_vec())?);
    let input = tape.concat(&[act, mask])?;
    let logits = predictor.apply(&mut tape, &vars, input)?;
    let argmax = kernels::argmax(tape.value(logits).data());
    let lp = tape.log_prob_at(logits, argmax)?;
    let g = tape.backward(lp)?.wrt(x);
    let plane = h * w;
    let mut saliency = vec![0.0; m];
    let mut sum = vec![0.0; plane];
    for (i, v) in g.data().iter().enumerate() {
        saliency[i / plane] += v.abs();
        sum[i % plane] += v.abs();
    }
    saliency.iter_mut().for_each(|v| *v /= plane as f64);
    let lo = sum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = hi - lo <= 0.0;
    let grid = if degenerate {
        vec![0.0; plane]
    } else {
        sum.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    Ok(Heatmap {
        height: h,
        width: w,
        grid,
        saliency,
        argmax,
        degenerate,
    })
}

/// 8-bit binary PGM (P5).
pub fn to_pgm(heat: &Heatmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", heat.width, heat.height).into_bytes();
    out.extend(heat.grid.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Mean saliency of relevant channels and of the remaining channels.
pub fn saliency_split(heat: &Heatmap, relevant: &[bool]) -> Option<(f64, f64)> {
    let mean = |want: bool| {
        let v: Vec<f64> = heat
            .saliency
            .iter()
            .zip(relevant)
            .filter(|(_, &r)| r == want)
            .map(|(s, _)| *s)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some((mean(true)?, mean(false)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_map() -> MetricMap {
        let mut m = MetricMap::zeros(vec!["a".into(), "b".into()], 8, 8).unwrap();
        m.set(0, 1, 1, 1.0);
        m.set(1, 6, 5, 1.0);
        m
    }

    #[test]
    fn thresholds() {
        assert_eq!(ood_threshold(240), 16);
        assert_eq!(ood_threshold(64), 4);
    }

    #[test]
    fn nearest_object_is_euclidean() {
        let (o, d) = nearest_object(&small_map(), (5, 5)).unwrap();
        assert_eq!(o, "b");
        assert_eq!(d, 1.0);
        let empty = MetricMap::zeros(vec!["a".into()], 4, 4).unwrap();
        assert!(nearest_object(&empty, (0, 0)).is_none());
    }

    #[test]
    fn heatmap_normalized_and_zeroed_channel_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = TargetPredictor::new(2, 3, &mut rng);
        // stem kernel is [F, M+1, 1, 1]; zero every weight reading channel 1
        let k = &mut p.stem.layers[0].kernel;
        let cin = k.shape()[1];
        for (i, v) in k.data_mut().iter_mut().enumerate() {
            if i % cin == 1 {
                *v = 0.0;
            }
        }
        let heat = attention_heatmap(&p, &small_map(), &AffinityScores(vec![0.7, 0.3]), &[1.0; 64]).unwrap();
        assert_eq!(heat.saliency[1], 0.0);
        assert!(heat.saliency[0] > 0.0);
        assert!(!heat.degenerate);
        assert!(heat.grid.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(heat.grid.iter().copied().fold(0.0, f64::max), 1.0);
        let pgm = to_pgm(&heat);
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(pgm.len(), 11 + 64);
    }

    #[test]
    fn zero_scores_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TargetPredictor::new(2, 3, &mut rng);
        let heat = attention_heatmap(&p, &small_map(), &AffinityScores(vec![0.0, 0.0]), &[1.0; 64]).unwrap();
        assert!(heat.degenerate);
        assert!(heat.grid.iter().all(|&v| v == 0.0));
    }
}
