use crate::gridworld::Transition;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy)]
struct Stored {
    tr: Transition,
    episode: u32,
    seq: u64,
}

/// Uniform experience replay over a fixed-capacity ring. Truncated
/// transitions are never stored (callers must not push them); sampling is
/// uniform with replacement. Consecutive sequence numbers sit in adjacent
/// ring slots, which makes temporal-pair lookup (for ATC) O(1).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Stored>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, tr: Transition, episode: u32) {
        assert!(!tr.truncated, "truncated transitions must never be stored");
        let stored = Stored {
            tr,
            episode,
            seq: self.pushed,
        };
        if self.items.len() < self.capacity {
            self.items.push(stored);
        } else {
            self.items[self.next] = stored;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    #[inline]
    pub fn get(&self, i: usize) -> Transition {
        self.items[i].tr
    }

    /// Uniform sample of `n` transitions, with replacement.
    pub fn sample(&self, n: usize, rng: &mut Stream, out: &mut Vec<Transition>) {
        debug_assert!(!self.items.is_empty());
        out.clear();
        for _ in 0..n {
            out.push(self.items[rng.below(self.items.len())].tr);
        }
    }

    /// Samples up to `n` temporal pairs (t, t+k) lying within one episode.
    /// Rejection-samples anchors; returns fewer pairs when the buffer holds
    /// few valid ones.
    pub fn sample_temporal_pairs(
        &self,
        n: usize,
        k: usize,
        rng: &mut Stream,
        out: &mut Vec<(Transition, Transition)>,
    ) {
        out.clear();
        if self.items.len() <= k {
            return;
        }
        let max_attempts = n * 64;
        let mut attempts = 0;
        while out.len() < n && attempts < max_attempts {
            attempts += 1;
            let i = rng.below(self.items.len());
            let j = (i + k) % self.capacity;
            if j >= self.items.len() {
                continue;
            }
            let (a, b) = (&self.items[i], &self.items[j]);
            if b.seq == a.seq + k as u64 && b.episode == a.episode {
                out.push((a.tr, b.tr));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Action;
    use crate::rng::Seed;

    fn tr(s: u16, episode_tag: f32) -> Transition {
        Transition {
            s,
            a: Action::Up,
            s_next: s,
            reward: episode_tag,
            discount: 0.99,
            truncated: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..6u16 {
            buf.push(tr(i, 0.0), 0);
        }
        assert_eq!(buf.len(), 4);
        let held: Vec<u16> = (0..4).map(|i| buf.get(i).s).collect();
        let mut sorted = held.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![2, 3, 4, 5]);
    }

    #[test]
    #[should_panic(expected = "truncated")]
    fn rejects_truncated_transitions() {
        let mut buf = ReplayBuffer::new(4);
        let mut t = tr(0, 0.0);
        t.truncated = true;
        buf.push(t, 0);
    }

    #[test]
    fn sampling_is_uniform_with_replacement() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..8u16 {
            buf.push(tr(i, 0.0), 0);
        }
        let mut rng = Seed(3).stream();
        let mut out = Vec::new();
        let mut counts = [0usize; 8];
        for _ in 0..100 {
            buf.sample(80, &mut rng, &mut out);
            for t in &out {
                counts[t.s as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, 8000);
        for &c in &counts {
            assert!((c as f64 - 1000.0).abs() < 200.0, "{counts:?}");
        }
    }

    #[test]
    fn temporal_pairs_stay_within_episode() {
        let mut buf = ReplayBuffer::new(64);
        // episode 0: seq 0..10, episode 1: seq 10..20
        for i in 0..10u16 {
            buf.push(tr(i, 0.0), 0);
        }
        for i in 10..20u16 {
            buf.push(tr(i, 0.0), 1);
        }
        let mut rng = Seed(4).stream();
        let mut pairs = Vec::new();
        buf.sample_temporal_pairs(64, 3, &mut rng, &mut pairs);
        assert!(!pairs.is_empty());
        for (a, b) in &pairs {
            assert_eq!(b.s, a.s + 3, "pair must be exactly k apart in time");
            // both in the same episode: s < 10 implies partner < 10
            assert_eq!(a.s < 10, b.s < 10);
            assert!(a.s < 7 || (10..17).contains(&a.s));
        }
    }

    #[test]
    fn temporal_pairs_survive_ring_wrap() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..40u16 {
            buf.push(tr(i, 0.0), (i / 8) as u32);
        }
        let mut rng = Seed(5).stream();
        let mut pairs = Vec::new();
        buf.sample_temporal_pairs(32, 3, &mut rng, &mut pairs);
        for (a, b) in &pairs {
            assert_eq!(b.s, a.s + 3);
            assert_eq!(a.s / 8, b.s / 8, "episode boundary crossed");
        }
    }
}
