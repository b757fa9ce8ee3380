use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OfflineDataset, PolicyTag, RewardConfig, Split, Step, Trajectory, TrajectoryError};
use crate::capture::Label;
use crate::io::{read_json, read_jsonl, write_json, write_jsonl, JsonlError};

/// Minimum malicious/benign ratio after oversampling.
pub const OVERSAMPLE_RATIO: f64 = 0.9;

/// Duplicates malicious items (drawn with replacement) until there are at
/// least `0.9 ×` as many as benign ones, then shuffles.
pub fn balance_oversample<T: Clone>(
    items: Vec<T>,
    label_of: impl Fn(&T) -> Label,
    seed: u64,
) -> Result<Vec<T>, TrajectoryError> {
    let malicious: Vec<usize> = (0..items.len())
        .filter(|&i| label_of(&items[i]) == Label::Malicious)
        .collect();
    let benign = items.iter().filter(|t| label_of(t) == Label::Benign).count();
    if malicious.is_empty() {
        return Err(TrajectoryError::MissingClass(Label::Benign));
    }
    if benign == 0 {
        return Err(TrajectoryError::MissingClass(Label::Malicious));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = items.clone();
    let mut n_mal = malicious.len();
    while (n_mal as f64) < OVERSAMPLE_RATIO * benign as f64 {
        let pick = malicious[rng.random_range(0..malicious.len())];
        out.push(items[pick].clone());
        n_mal += 1;
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Flow-level, label-stratified split. The test set holds
/// `round(fraction · n)` items, apportioned across labels by largest
/// remainder so each class is within one item of its exact share.
pub fn split_dataset<T: Clone>(
    items: &[T],
    test_fraction: f64,
    label_of: impl Fn(&T) -> Label,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), TrajectoryError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(TrajectoryError::InvalidFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = [Label::Benign, Label::Malicious, Label::Unlabeled];
    let mut groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..items.len()).filter(|&i| label_of(&items[i]) == *c).collect())
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }

    let n_test = (test_fraction * items.len() as f64).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|g| test_fraction * g.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = n_test.saturating_sub(quota.iter().sum());
    let mut by_remainder: Vec<usize> = (0..groups.len()).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for g in by_remainder {
        if remaining == 0 {
            break;
        }
        if quota[g] < groups[g].len() {
            quota[g] += 1;
            remaining -= 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, q) in groups.iter().zip(quota) {
        test.extend(g[..q].iter().map(|&i| items[i].clone()));
        train.extend(g[q..].iter().map(|&i| items[i].clone()));
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// A contiguous run of at most `K` steps ending at `end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window<'a> {
    pub trajectory: &'a Trajectory,
    pub start: usize,
    pub end: usize,
}

impl<'a> Window<'a> {
    pub fn steps(&self) -> &'a [Step] {
        &self.trajectory.steps[self.start..=self.end]
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Uniform draw over all steps of the dataset, optionally reweighted per
/// trajectory: a trajectory is picked with probability proportional to
/// `weight × length`, then its end step uniformly. Windows near the start
/// of an episode are shorter than `K` and are not padded.
pub fn sample_window<'a, R: Rng + ?Sized>(
    trajectories: &'a [Trajectory],
    k: usize,
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Option<Window<'a>> {
    let k = k.max(1);
    let mass: Vec<f64> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| t.len() as f64 * weights.map_or(1.0, |w| w.get(i).copied().unwrap_or(0.0).max(0.0)))
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut pick = mass.len() - 1;
    for (i, m) in mass.iter().enumerate() {
        if u < *m {
            pick = i;
            break;
        }
        u -= m;
    }
    while mass[pick] <= 0.0 {
        pick -= 1;
    }
    let traj = &trajectories[pick];
    let end = rng.random_range(0..traj.len());
    let start = (end + 1).saturating_sub(k);
    Some(Window {
        trajectory: traj,
        start,
        end,
    })
}

/// Dataset-level metadata stored next to the trajectory JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub policy: PolicyTag,
    pub reward: RewardConfig,
    pub split: Split,
    pub trajectories: usize,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

/// Writes one trajectory per line plus a `<path>.meta.json` sidecar.
pub fn write_dataset(path: &Path, ds: &OfflineDataset) -> Result<(), JsonlError> {
    write_jsonl(path, &ds.trajectories)?;
    write_json(
        &meta_path(path),
        &DatasetMeta {
            policy: ds.policy,
            reward: ds.reward_config,
            split: ds.split,
            trajectories: ds.trajectories.len(),
        },
    )
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset, JsonlError> {
    let trajectories: Vec<Trajectory> = read_jsonl(path)?;
    let meta: DatasetMeta = read_json(&meta_path(path))?;
    for (i, t) in trajectories.iter().enumerate() {
        if t.policy != meta.policy {
            return Err(JsonlError::schema(i + 1, "policy", "differs from the dataset policy"));
        }
        if t.steps.is_empty() {
            return Err(JsonlError::schema(i + 1, "steps", "trajectory has no steps"));
        }
        if !t.label.is_labeled() {
            return Err(JsonlError::schema(i + 1, "label", "trajectory is unlabeled"));
        }
    }
    Ok(OfflineDataset {
        trajectories,
        policy: meta.policy,
        reward_config: meta.reward,
        split: meta.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Decision;

    fn traj(id: &str, n: usize) -> Trajectory {
        Trajectory {
            flow_id: id.into(),
            label: Label::Benign,
            policy: PolicyTag::Random,
            steps: (0..n)
                .map(|i| Step {
                    t: i as f64,
                    rtg: 0.0,
                    obs: vec![i as f64],
                    d: if i + 1 == n { Decision::Benign } else { Decision::Wait },
                    w: 1.0,
                    r: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn oversampling_reaches_ratio() {
        let mut items: Vec<Label> = vec![Label::Benign; 10];
        items.extend([Label::Malicious; 2]);
        let out = balance_oversample(items, |l| *l, 1).unwrap();
        assert!(out.iter().filter(|l| **l == Label::Malicious).count() >= 9);
        assert_eq!(out.iter().filter(|l| **l == Label::Benign).count(), 10);
    }

    #[test]
    fn balanced_input_is_only_shuffled() {
        let items: Vec<(usize, Label)> = (0..10)
            .map(|i| (i, if i % 2 == 0 { Label::Benign } else { Label::Malicious }))
            .collect();
        let mut out = balance_oversample(items.clone(), |x| x.1, 9).unwrap();
        out.sort();
        assert_eq!(out, items);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            balance_oversample(vec![Label::Benign; 3], |l| *l, 0),
            Err(TrajectoryError::MissingClass(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<(usize, Label)> = (0..100)
            .map(|i| (i, if i % 3 == 0 { Label::Malicious } else { Label::Benign }))
            .collect();
        let (tr, te) = split_dataset(&items, 0.2, |x| x.1, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mal_test = te.iter().filter(|x| x.1 == Label::Malicious).count() as f64;
        assert!((mal_test - 0.2 * 34.0).abs() <= 1.0);
        let (tr2, te2) = split_dataset(&items, 0.2, |x| x.1, 5).unwrap();
        assert_eq!((tr, te), (tr2, te2));
        let (tr, te) = split_dataset(&items, 0.0, |x| x.1, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (100, 0));
        assert!(split_dataset(&items, 1.5, |x| x.1, 5).is_err());
    }

    #[test]
    fn short_trajectory_fits_in_one_window() {
        let ts = vec![traj("a", 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut saw_full = false;
        for _ in 0..50 {
            let w = sample_window(&ts, 5, None, &mut rng).unwrap();
            assert_eq!(w.start, 0);
            saw_full |= w.len() == 3;
        }
        assert!(saw_full);
        let w = sample_window(&ts, 1, None, &mut rng).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.steps()[0].obs[0], w.end as f64);
    }

    #[test]
    fn zero_weight_trajectory_is_never_drawn() {
        let ts = vec![traj("a", 4), traj("b", 4)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = sample_window(&ts, 2, Some(&[0.0, 1.0]), &mut rng).unwrap();
            assert_eq!(w.trajectory.flow_id, "b");
        }
        assert!(sample_window(&ts, 2, Some(&[0.0, 0.0]), &mut rng).is_none());
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.jsonl");
        let ds = OfflineDataset {
            trajectories: vec![traj("a", 2), traj("b", 1)],
            policy: PolicyTag::Random,
            reward_config: RewardConfig::default(),
            split: Split::Train,
        };
        write_dataset(&p, &ds).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn weighted_draws_follow_the_weights() {
        let ts = [traj("a", 5), traj("b", 5)];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 40_000;
        let mut first = 0;
        for _ in 0..draws {
            let w = sample_window(&ts, 3, Some(&[9.0, 1.0]), &mut rng).unwrap();
            assert!(w.len() <= 3 && w.end < 5 && w.start + w.len() == w.end + 1);
            first += (w.trajectory.flow_id == "a") as usize;
        }
        let p = first as f64 / draws as f64;
        assert!((p - 0.9).abs() < 0.01, "{p}");
    }
}
