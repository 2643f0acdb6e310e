//! Named, independent random substreams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Split,
    Mask,
    Init,
    Epsilon,
    Shuffle,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Data,
        Stream::Split,
        Stream::Mask,
        Stream::Init,
        Stream::Epsilon,
        Stream::Shuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Split => "split",
            Stream::Mask => "mask",
            Stream::Init => "init",
            Stream::Epsilon => "epsilon",
            Stream::Shuffle => "shuffle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Phase> {
        match tag {
            "pretrain" => Some(Phase::Pretrain),
            "finetune" => Some(Phase::Finetune),
            _ => None,
        }
    }
}

/// ChaCha stream for `(seed, stream, phase)`. Streams never overlap, so the
/// amount drawn from one cannot shift another.
pub fn substream(seed: u64, stream: Stream, phase: Option<Phase>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_id = match phase {
        None => 0,
        Some(Phase::Pretrain) => 1,
        Some(Phase::Finetune) => 2,
    };
    rng.set_stream(((stream as u64) << 8) | phase_id);
    rng
}

/// `seed=<s> <stream>@<word position>...` for the given live streams.
pub fn summary(seed: u64, live: &[(Stream, &ChaCha8Rng)]) -> String {
    let mut s = format!("seed={seed}");
    for (stream, rng) in live {
        s.push_str(&format!(" {}@{}", stream.name(), rng.get_word_pos()));
    }
    s
}
