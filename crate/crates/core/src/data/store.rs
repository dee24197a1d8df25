use rand::Rng as _;

use crate::envs::Environment;
use crate::error::{Result, VaiError};
use crate::frame::{fmt_shape, Frame};
use crate::rng::{derive_seed_n, stream, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreMetadata {
    pub env_id: String,
    pub texture_id: String,
    pub seed: u64,
}

/// Temporally ordered, contiguous frames of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    start_step: usize,
    frames: Vec<Frame>,
}

impl Episode {
    pub fn new(start_step: usize, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(VaiError::InvalidArgument("episode has no frames".into()));
        }
        Ok(Self { start_step, frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start_step(&self) -> usize {
        self.start_step
    }

    /// Environment step index of the `i`-th frame.
    pub fn step_index(&self, i: usize) -> usize {
        self.start_step + i
    }
}

/// Position of a frame inside a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrameIndex {
    pub episode: usize,
    pub frame: usize,
}

/// Immutable collection of episodes that all share one frame shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStore {
    metadata: StoreMetadata,
    episodes: Vec<Episode>,
    shape: (usize, usize, usize),
    total: usize,
}

impl EpisodeStore {
    pub fn new(metadata: StoreMetadata, episodes: Vec<Episode>) -> Result<Self> {
        let shape = episodes
            .first()
            .map(|e| e.frames[0].shape())
            .ok_or(VaiError::EmptyStore)?;
        for (ei, ep) in episodes.iter().enumerate() {
            for (fi, f) in ep.frames.iter().enumerate() {
                if f.shape() != shape {
                    return Err(VaiError::Frame {
                        index: fi,
                        source: Box::new(VaiError::shape(
                            format!("{} (episode {ei})", fmt_shape(shape)),
                            fmt_shape(f.shape()),
                        )),
                    });
                }
            }
        }
        let total = episodes.iter().map(Episode::len).sum();
        Ok(Self {
            metadata,
            episodes,
            shape,
            total,
        })
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total number of frames.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn frame(&self, index: FrameIndex) -> &Frame {
        &self.episodes[index.episode].frames[index.frame]
    }

    /// Frames in store order (episode by episode).
    pub fn frames(&self) -> impl Iterator<Item = &Frame> + '_ {
        self.episodes.iter().flat_map(|e| e.frames.iter())
    }

    pub fn indices(&self) -> impl Iterator<Item = FrameIndex> + '_ {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.len()).map(move |f| FrameIndex { episode: e, frame: f }))
    }

    /// Maps a flat position in store order to an index.
    pub fn index_of(&self, mut flat: usize) -> Option<FrameIndex> {
        for (e, ep) in self.episodes.iter().enumerate() {
            if flat < ep.len() {
                return Some(FrameIndex { episode: e, frame: flat });
            }
            flat -= ep.len();
        }
        None
    }
}

/// Two frames drawn for transporter training.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub source: &'a Frame,
    pub target: &'a Frame,
    pub source_index: FrameIndex,
    pub target_index: FrameIndex,
    pub same_episode: bool,
}

/// Runs a uniform-random policy and records exactly `count` frames.
///
/// Episode `e` is reset with a seed derived from `seed` and `e`, and the
/// action stream is derived from `seed`, so a fixed seed reproduces the
/// store bit for bit.
pub fn collect_random_transitions(
    env: &mut dyn Environment,
    count: usize,
    seed: u64,
) -> Result<EpisodeStore> {
    if count == 0 {
        return Err(VaiError::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = stream(seed, "collect-actions");
    let action_dim = env.action_dim();
    let mut episodes = Vec::new();
    let mut collected = 0;
    while collected < count {
        let ep = episodes.len();
        let first = env
            .reset(derive_seed_n(seed, "collect-episode", ep as u64))
            .map_err(|e| env_err(ep, 0, e))?;
        let mut frames = vec![first];
        collected += 1;
        let mut step = 0;
        while collected < count {
            let action: Vec<f32> = (0..action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            step += 1;
            let t = env.step(&action).map_err(|e| env_err(ep, step, e))?;
            frames.push(t.frame);
            collected += 1;
            if t.done {
                break;
            }
        }
        episodes.push(Episode::new(0, frames)?);
    }
    log::debug!("collected {count} frames in {} episodes", episodes.len());
    EpisodeStore::new(
        StoreMetadata {
            env_id: env.id().to_string(),
            texture_id: env.texture_id(),
            seed,
        },
        episodes,
    )
}

fn env_err(episode: usize, step: usize, e: VaiError) -> VaiError {
    VaiError::Environment {
        episode,
        step,
        source: Box::new(e),
    }
}

/// Draws a (source, target) pair.
///
/// With probability `cross_episode_prob` the frames come from two different
/// episodes; otherwise both come from one episode with the source not later
/// than the target, uniformly over all such index pairs in the store.
pub fn sample_frame_pair<'a>(
    store: &'a EpisodeStore,
    cross_episode_prob: f64,
    rng: &mut Rng,
) -> Result<FramePair<'a>> {
    if !(0.0..=1.0).contains(&cross_episode_prob) {
        return Err(VaiError::InvalidArgument(format!(
            "cross_episode_prob {cross_episode_prob} outside [0, 1]"
        )));
    }
    if cross_episode_prob > 0.0 && store.num_episodes() < 2 {
        return Err(VaiError::SingleEpisodeStore {
            episodes: store.num_episodes(),
        });
    }
    let cross = cross_episode_prob > 0.0 && rng.random_bool(cross_episode_prob);
    let (s, t) = if cross {
        let s = store
            .index_of(rng.random_range(0..store.len()))
            .expect("flat index in range");
        let others = store.len() - store.episodes[s.episode].len();
        let mut flat = rng.random_range(0..others);
        let mut t = None;
        for (e, ep) in store.episodes.iter().enumerate() {
            if e == s.episode {
                continue;
            }
            if flat < ep.len() {
                t = Some(FrameIndex { episode: e, frame: flat });
                break;
            }
            flat -= ep.len();
        }
        (s, t.expect("other episode frame in range"))
    } else {
        let total: usize = store.episodes.iter().map(|e| tri(e.len())).sum();
        let mut k = rng.random_range(0..total);
        let mut pair = None;
        for (e, ep) in store.episodes.iter().enumerate() {
            let n = tri(ep.len());
            if k < n {
                // k enumerates (i, j) with i <= j, grouped by j
                let mut j = 0;
                while tri(j + 1) <= k {
                    j += 1;
                }
                let i = k - tri(j);
                pair = Some((FrameIndex { episode: e, frame: i }, FrameIndex { episode: e, frame: j }));
                break;
            }
            k -= n;
        }
        pair.expect("pair index in range")
    };
    Ok(FramePair {
        source: store.frame(s),
        target: store.frame(t),
        source_index: s,
        target_index: t,
        same_episode: !cross,
    })
}

/// Number of pairs `(i, j)` with `i <= j < n`.
fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{SpriteWorld, SpriteWorldConfig, SpriteWorldEnv};
    use rand::SeedableRng;

    fn env() -> SpriteWorldEnv {
        let cfg = SpriteWorldConfig {
            height: 16,
            width: 16,
            episode_length: 7,
            ..Default::default()
        };
        SpriteWorldEnv::new(SpriteWorld::new(cfg).unwrap())
    }

    fn toy_store(lens: &[usize]) -> EpisodeStore {
        let episodes = lens
            .iter()
            .enumerate()
            .map(|(e, &n)| {
                let frames = (0..n)
                    .map(|i| Frame::filled(2, 2, &[e as f32 / 10.0, i as f32 / 100.0, 0.0]))
                    .collect();
                Episode::new(0, frames).unwrap()
            })
            .collect();
        EpisodeStore::new(
            StoreMetadata {
                env_id: "toy".into(),
                texture_id: "none".into(),
                seed: 0,
            },
            episodes,
        )
        .unwrap()
    }

    #[test]
    fn collects_exact_count() {
        let mut e = env();
        let store = collect_random_transitions(&mut e, 1, 0).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.num_episodes(), 1);

        let store = collect_random_transitions(&mut e, 20, 0).unwrap();
        assert_eq!(store.len(), 20);
        // reset frame + 7 steps per full episode
        assert_eq!(
            store.episodes().iter().map(Episode::len).collect::<Vec<_>>(),
            vec![8, 8, 4]
        );
        assert_eq!(store.metadata().env_id, "spriteworld");
        assert_eq!(store.metadata().texture_id, "grid");
        assert!(collect_random_transitions(&mut e, 0, 0).is_err());
    }

    #[test]
    fn collection_is_reproducible() {
        let a = collect_random_transitions(&mut env(), 50, 4).unwrap();
        let b = collect_random_transitions(&mut env(), 50, 4).unwrap();
        let c = collect_random_transitions(&mut env(), 50, 5).unwrap();
        let bytes = |s: &EpisodeStore| s.frames().flat_map(Frame::to_u8).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn degenerate_probabilities() {
        let store = toy_store(&[3, 4, 2]);
        let mut rng = Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = sample_frame_pair(&store, 0.0, &mut rng).unwrap();
            assert!(p.same_episode);
            assert_eq!(p.source_index.episode, p.target_index.episode);
            assert!(p.source_index.frame <= p.target_index.frame);
            let q = sample_frame_pair(&store, 1.0, &mut rng).unwrap();
            assert!(!q.same_episode);
            assert_ne!(q.source_index.episode, q.target_index.episode);
        }
    }

    #[test]
    fn single_episode_store_rejects_cross_sampling() {
        let store = toy_store(&[5]);
        let mut rng = Rng::seed_from_u64(0);
        let err = sample_frame_pair(&store, 0.5, &mut rng).unwrap_err();
        assert!(err.to_string().contains("has 1"), "{err}");
        assert!(sample_frame_pair(&store, 0.0, &mut rng).is_ok());
        assert!(sample_frame_pair(&store, 1.5, &mut rng).is_err());
    }

    #[test]
    fn cross_fraction_near_half() {
        let store = toy_store(&[5, 6, 7, 3]);
        let mut rng = Rng::seed_from_u64(42);
        let cross = (0..10_000)
            .filter(|_| !sample_frame_pair(&store, 0.5, &mut rng).unwrap().same_episode)
            .count();
        let frac = cross as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn same_episode_pairs_are_uniform() {
        // 2 + 3 frames -> 3 + 6 = 9 valid ordered pairs
        let store = toy_store(&[2, 3]);
        let mut rng = Rng::seed_from_u64(1);
        let mut counts = std::collections::BTreeMap::new();
        let n = 36_000;
        for _ in 0..n {
            let p = sample_frame_pair(&store, 0.0, &mut rng).unwrap();
            *counts.entry((p.source_index, p.target_index)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 9);
        for &c in counts.values() {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 9.0).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn index_helpers() {
        let store = toy_store(&[2, 3]);
        assert_eq!(store.index_of(3), Some(FrameIndex { episode: 1, frame: 1 }));
        assert_eq!(store.index_of(5), None);
        assert_eq!(store.indices().count(), 5);
        assert!(EpisodeStore::new(store.metadata().clone(), vec![]).is_err());
        assert!(Episode::new(0, vec![]).is_err());
    }
}
