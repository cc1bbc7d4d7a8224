use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{LoatError, Result};
use crate::policy::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub sr: f64,
    pub spl: f64,
    pub gfr: f64,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub sr: f64,
    pub spl: f64,
    pub gfr: f64,
    pub n_episodes: usize,
    pub per_target: BTreeMap<String, Rates>,
}

/// `success * l / max(p, l)` with `p` floored at 1.
pub fn spl_term(success: bool, shortest: usize, path: usize) -> f64 {
    if !success {
        return 0.0;
    }
    let p = path.max(1);
    shortest as f64 / p.max(shortest) as f64
}

fn rates<'a>(eps: impl Iterator<Item = &'a Episode>) -> Result<Rates> {
    let (mut s, mut spl, mut g, mut n) = (0.0, 0.0, 0.0, 0usize);
    for e in eps {
        let l = e.shortest_len.ok_or_else(|| {
            LoatError::InvalidArgument(format!("episode in scene {} has no shortest path", e.scene_seed))
        })?;
        s += e.success as u8 as f64;
        g += e.goal_found as u8 as f64;
        spl += spl_term(e.success, l, e.path_len());
        n += 1;
    }
    if n == 0 {
        return Err(LoatError::InvalidArgument("no episodes to score".into()));
    }
    let k = n as f64;
    Ok(Rates {
        sr: s / k,
        spl: spl / k,
        gfr: g / k,
        n_episodes: n,
    })
}

/// Success rate, SPL and goal-found rate, overall and per target.
pub fn compute_metrics(episodes: &[Episode]) -> Result<Metrics> {
    let all = rates(episodes.iter())?;
    let mut per_target = BTreeMap::new();
    let mut names: Vec<&String> = episodes.iter().map(|e| &e.target).collect();
    names.sort();
    names.dedup();
    for t in names {
        per_target.insert(t.clone(), rates(episodes.iter().filter(|e| &e.target == t))?);
    }
    Ok(Metrics {
        sr: all.sr,
        spl: all.spl,
        gfr: all.gfr,
        n_episodes: all.n_episodes,
        per_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(success: bool, found: bool, l: usize, path: usize) -> Episode {
        Episode {
            scene_seed: 0,
            target: "t".into(),
            mode: "m".into(),
            start: (0, 0),
            trajectory: (0..=path).map(|c| (0, c)).collect(),
            success,
            goal_found: found,
            shortest_len: Some(l),
            steps: path + 1,
            gammas: vec![],
        }
    }

    #[test]
    fn optimal_success() {
        let m = compute_metrics(&[ep(true, true, 7, 7)]).unwrap();
        assert_eq!((m.sr, m.spl, m.gfr), (1.0, 1.0, 1.0));
    }

    #[test]
    fn failure_scores_zero() {
        let m = compute_metrics(&[ep(false, false, 7, 30)]).unwrap();
        assert_eq!((m.sr, m.spl, m.gfr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn double_path_halves_spl() {
        let m = compute_metrics(&[ep(true, true, 6, 12)]).unwrap();
        assert_eq!(m.spl, 0.5);
    }

    #[test]
    fn empty_and_missing_length_rejected() {
        assert!(compute_metrics(&[]).is_err());
        let mut e = ep(true, true, 1, 1);
        e.shortest_len = None;
        assert!(compute_metrics(&[e]).is_err());
    }

    #[test]
    fn zero_length_guard() {
        assert_eq!(spl_term(true, 0, 0), 0.0);
        assert_eq!(spl_term(true, 3, 2), 1.0);
    }
}
