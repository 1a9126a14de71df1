//! The adaptive verification protocol as message passing between Alice, Bob
//! and a referee.
//!
//! The referee stands in for the source and the quantum correlations: it holds
//! the joint state σ and the session RNG, and answers measurement requests
//! with sampled outcomes. Alice and Bob only see frames. All frames travel in
//! order over one [`Link`] and are delivered to every actor; the delivered
//! sequence is the session transcript.
//!
//! # Wire format
//!
//! Every frame is 6 bytes: `tag: u8`, `round: u32` little-endian,
//! `payload: u8`. `SessionEnd` appends a `u32` little-endian accept count
//! (10 bytes total) and carries the number of completed rounds in the round
//! field.
//!
//! | tag | frame            | payload                                   | sender    |
//! |-----|------------------|-------------------------------------------|-----------|
//! | 1   | `RoundStart`     | `setting \| direction << 7` (0 = A→B)    | referee   |
//! | 2   | `MeasureRequest` | `party << 7 \| projector code`            | the party |
//! | 3   | `MeasureResult`  | `party << 7 \| outcome`                   | referee   |
//! | 4   | `FeedForward`    | leader outcome bit                        | leader    |
//! | 5   | `Verdict`        | 1 = accept, 0 = reject                    | follower  |
//! | 6   | `SessionEnd`     | 0, followed by `accepts: u32`             | referee   |
//!
//! Party bit: 0 = Alice, 1 = Bob. Projector codes are [`ProjectorName::code`].
//! A round is exactly `RoundStart`, leader `MeasureRequest`/`MeasureResult`,
//! `FeedForward`, follower `MeasureRequest`/`MeasureResult`, `Verdict`.
//!
//! The leader requests the projector of its outcome-1 eigenvector; the
//! follower requests its accept projector for the forwarded outcome.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QsvError, Result};
use crate::quantum::{DensityMatrix, HermitianOperator, Matrix4};
use crate::simulator::{
    apply_noise, follower_accept_probability, leader_branch, trial_rng, trial_seed, TrialConfig,
    TrialRecord,
};
use crate::strategies::{
    pick_index, Direction, MeasurementSetting, Party, ProjectorName, Strategy, StrategyKind,
};

/// Settings with fewer rounds than this make a realized-operator estimate
/// low-confidence.
pub const MIN_ROUNDS_PER_SETTING: u64 = 10;

/// Fatal session error. Carries the round in which it happened.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("round {round}: malformed frame: {detail}")]
    Malformed { round: u32, detail: String },
    #[error("round {round}: channel closed mid-session")]
    ChannelClosed { round: u32 },
    #[error("round {round}: unexpected frame: {detail}")]
    Grammar { round: u32, detail: String },
}

impl ProtocolError {
    pub fn round(&self) -> u32 {
        match self {
            ProtocolError::Malformed { round, .. }
            | ProtocolError::ChannelClosed { round }
            | ProtocolError::Grammar { round, .. } => *round,
        }
    }
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    RoundStart,
    MeasureRequest,
    MeasureResult,
    FeedForward,
    Verdict,
    SessionEnd,
}

impl FrameKind {
    pub fn tag(self) -> u8 {
        match self {
            FrameKind::RoundStart => 1,
            FrameKind::MeasureRequest => 2,
            FrameKind::MeasureResult => 3,
            FrameKind::FeedForward => 4,
            FrameKind::Verdict => 5,
            FrameKind::SessionEnd => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => FrameKind::RoundStart,
            2 => FrameKind::MeasureRequest,
            3 => FrameKind::MeasureResult,
            4 => FrameKind::FeedForward,
            5 => FrameKind::Verdict,
            6 => FrameKind::SessionEnd,
            _ => return None,
        })
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::RoundStart => "round_start",
            FrameKind::MeasureRequest => "measure_request",
            FrameKind::MeasureResult => "measure_result",
            FrameKind::FeedForward => "feed_forward",
            FrameKind::Verdict => "verdict",
            FrameKind::SessionEnd => "session_end",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    RoundStart { round: u32, setting: u8, direction: Direction },
    MeasureRequest { round: u32, party: Party, projector: ProjectorName },
    MeasureResult { round: u32, party: Party, outcome: u8 },
    FeedForward { round: u32, outcome: u8 },
    Verdict { round: u32, accept: bool },
    SessionEnd { rounds: u32, accepts: u32 },
}

pub const FRAME_LEN: usize = 6;
pub const SESSION_END_LEN: usize = 10;

fn party_bit(p: Party) -> u8 {
    match p {
        Party::Alice => 0,
        Party::Bob => 1,
    }
}

fn bit_party(b: u8) -> Party {
    if b == 0 {
        Party::Alice
    } else {
        Party::Bob
    }
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::RoundStart { .. } => FrameKind::RoundStart,
            Frame::MeasureRequest { .. } => FrameKind::MeasureRequest,
            Frame::MeasureResult { .. } => FrameKind::MeasureResult,
            Frame::FeedForward { .. } => FrameKind::FeedForward,
            Frame::Verdict { .. } => FrameKind::Verdict,
            Frame::SessionEnd { .. } => FrameKind::SessionEnd,
        }
    }

    /// Round field as on the wire (completed rounds for `SessionEnd`).
    pub fn round(&self) -> u32 {
        match *self {
            Frame::RoundStart { round, .. }
            | Frame::MeasureRequest { round, .. }
            | Frame::MeasureResult { round, .. }
            | Frame::FeedForward { round, .. }
            | Frame::Verdict { round, .. } => round,
            Frame::SessionEnd { rounds, .. } => rounds,
        }
    }

    pub fn payload(&self) -> u8 {
        match *self {
            Frame::RoundStart { setting, direction, .. } => {
                setting | (u8::from(direction == Direction::BobToAlice) << 7)
            }
            Frame::MeasureRequest { party, projector, .. } => (party_bit(party) << 7) | projector.code(),
            Frame::MeasureResult { party, outcome, .. } => (party_bit(party) << 7) | outcome,
            Frame::FeedForward { outcome, .. } => outcome,
            Frame::Verdict { accept, .. } => u8::from(accept),
            Frame::SessionEnd { .. } => 0,
        }
    }

    /// Rebuilds a frame from its wire fields. `trailer` is the accept count
    /// of `SessionEnd` and ignored otherwise.
    pub fn from_parts(tag: u8, round: u32, payload: u8, trailer: u32) -> std::result::Result<Frame, String> {
        let kind = FrameKind::from_tag(tag).ok_or_else(|| format!("unknown tag {tag}"))?;
        let bit = |x: u8, what: &str| {
            if x <= 1 {
                Ok(x)
            } else {
                Err(format!("{kind} {what} {x} is not a bit"))
            }
        };
        Ok(match kind {
            FrameKind::RoundStart => {
                let setting = payload & 0x7f;
                if setting > 2 {
                    return Err(format!("setting index {setting} out of range"));
                }
                let direction = if payload >> 7 == 0 {
                    Direction::AliceToBob
                } else {
                    Direction::BobToAlice
                };
                Frame::RoundStart { round, setting, direction }
            }
            FrameKind::MeasureRequest => {
                let code = payload & 0x7f;
                let projector =
                    ProjectorName::from_code(code).ok_or_else(|| format!("unknown projector code {code}"))?;
                Frame::MeasureRequest { round, party: bit_party(payload >> 7), projector }
            }
            FrameKind::MeasureResult => Frame::MeasureResult {
                round,
                party: bit_party(payload >> 7),
                outcome: bit(payload & 0x7f, "outcome")?,
            },
            FrameKind::FeedForward => Frame::FeedForward { round, outcome: bit(payload, "outcome")? },
            FrameKind::Verdict => Frame::Verdict { round, accept: bit(payload, "verdict")? == 1 },
            FrameKind::SessionEnd => {
                if payload != 0 {
                    return Err(format!("session_end payload {payload} must be 0"));
                }
                Frame::SessionEnd { rounds: round, accepts: trailer }
            }
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SESSION_END_LEN);
        out.push(self.kind().tag());
        out.extend_from_slice(&self.round().to_le_bytes());
        out.push(self.payload());
        if let Frame::SessionEnd { accepts, .. } = self {
            out.extend_from_slice(&accepts.to_le_bytes());
        }
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(Frame, usize), String> {
        if bytes.len() < FRAME_LEN {
            return Err(format!("truncated frame: {} of {FRAME_LEN} bytes", bytes.len()));
        }
        let round = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let (trailer, len) = if bytes[0] == FrameKind::SessionEnd.tag() {
            if bytes.len() < SESSION_END_LEN {
                return Err(format!("truncated session_end: {} of {SESSION_END_LEN} bytes", bytes.len()));
            }
            (u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")), SESSION_END_LEN)
        } else {
            (0, FRAME_LEN)
        };
        Frame::from_parts(bytes[0], round, bytes[5], trailer).map(|f| (f, len))
    }
}

// ---------------------------------------------------------------------------
// Links
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinkFault {
    Closed,
    Malformed(String),
}

/// Ordered reliable transport. `transmit` returns the frame as the receiving
/// side sees it.
pub trait Link {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault>;
}

/// Passes frames as values.
#[derive(Clone, Debug, Default)]
pub struct MemoryLink;

impl Link for MemoryLink {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault> {
        Ok(*frame)
    }
}

/// Serialises every frame into a byte stream and decodes it back on the
/// receiving end. Optionally stops delivering bytes after a limit, which
/// models a stream cut mid-frame.
#[derive(Clone, Debug, Default)]
pub struct ByteLink {
    wire: VecDeque<u8>,
    byte_limit: Option<usize>,
    bytes_sent: usize,
    /// Every byte accepted for delivery, in order.
    pub sent: Vec<u8>,
}

impl ByteLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn truncated_after(bytes: usize) -> Self {
        ByteLink { byte_limit: Some(bytes), ..Self::default() }
    }
}

impl Link for ByteLink {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault> {
        for b in frame.encode() {
            if self.byte_limit.is_some_and(|l| self.bytes_sent >= l) {
                break;
            }
            self.wire.push_back(b);
            self.sent.push(b);
            self.bytes_sent += 1;
        }
        if self.wire.is_empty() {
            return Err(LinkFault::Closed);
        }
        let (decoded, used) = Frame::decode(self.wire.make_contiguous()).map_err(LinkFault::Malformed)?;
        self.wire.drain(..used);
        Ok(decoded)
    }
}

/// Frames over a real byte stream: written to `tx`, read back from `rx`
/// (e.g. the two ends of a socket pair).
pub struct StreamLink<W: Write, R: Read> {
    tx: W,
    rx: R,
}

impl<W: Write, R: Read> StreamLink<W, R> {
    pub fn new(tx: W, rx: R) -> Self {
        StreamLink { tx, rx }
    }
}

fn read_fault(e: io::Error) -> LinkFault {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        LinkFault::Closed
    } else {
        LinkFault::Malformed(e.to_string())
    }
}

impl<W: Write, R: Read> Link for StreamLink<W, R> {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault> {
        self.tx
            .write_all(&frame.encode())
            .and_then(|_| self.tx.flush())
            .map_err(|_| LinkFault::Closed)?;
        let mut buf = [0u8; SESSION_END_LEN];
        self.rx.read_exact(&mut buf[..FRAME_LEN]).map_err(read_fault)?;
        let len = if buf[0] == FrameKind::SessionEnd.tag() {
            self.rx.read_exact(&mut buf[FRAME_LEN..]).map_err(read_fault)?;
            SESSION_END_LEN
        } else {
            FRAME_LEN
        };
        Frame::decode(&buf[..len]).map(|(f, _)| f).map_err(LinkFault::Malformed)
    }
}

/// Wraps a link and closes it after a fixed number of frames.
pub struct ClosingLink<L: Link> {
    inner: L,
    remaining: usize,
}

impl<L: Link> ClosingLink<L> {
    pub fn new(inner: L, frames: usize) -> Self {
        ClosingLink { inner, remaining: frames }
    }
}

impl<L: Link> Link for ClosingLink<L> {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault> {
        if self.remaining == 0 {
            return Err(LinkFault::Closed);
        }
        self.remaining -= 1;
        self.inner.transmit(frame)
    }
}

impl<L: Link + ?Sized> Link for Box<L> {
    fn transmit(&mut self, frame: &Frame) -> std::result::Result<Frame, LinkFault> {
        (**self).transmit(frame)
    }
}

// ---------------------------------------------------------------------------
// Strategy plumbing
// ---------------------------------------------------------------------------

/// Direction rule of a session, derived from the strategy kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Fixed(Direction),
    /// Direction drawn per round, Alice leading with probability ½.
    RoleSwitching,
}

impl SessionMode {
    pub fn for_kind(kind: StrategyKind) -> Result<Self> {
        match kind {
            StrategyKind::UniLocc(d) => Ok(SessionMode::Fixed(d)),
            StrategyKind::BiLocc => Ok(SessionMode::RoleSwitching),
            other => Err(QsvError::Unsupported(format!(
                "strategy '{other}' has no feed-forward realization; use uni, uni_ba or bi"
            ))),
        }
    }
}

/// The Uni settings of both directions; the parties' and the referee's
/// shared knowledge.
#[derive(Clone, Debug)]
struct SettingBook {
    a_to_b: Strategy,
    b_to_a: Strategy,
}

impl SettingBook {
    fn new(theta_deg: f64) -> Result<Self> {
        Ok(SettingBook {
            a_to_b: Strategy::uni_locc(theta_deg, Direction::AliceToBob)?,
            b_to_a: Strategy::uni_locc(theta_deg, Direction::BobToAlice)?,
        })
    }

    fn strategy(&self, d: Direction) -> &Strategy {
        match d {
            Direction::AliceToBob => &self.a_to_b,
            Direction::BobToAlice => &self.b_to_a,
        }
    }

    fn setting(&self, d: Direction, index: u8) -> Option<&MeasurementSetting> {
        self.strategy(d).settings().get(index as usize)
    }
}

// ---------------------------------------------------------------------------
// Actors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sender {
    Alice,
    Bob,
    Referee,
}

impl From<Party> for Sender {
    fn from(p: Party) -> Self {
        match p {
            Party::Alice => Sender::Alice,
            Party::Bob => Sender::Bob,
        }
    }
}

/// Position inside the round grammar; `next` is the frame kind expected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
enum Stage {
    #[default]
    Idle,
    LeaderRequest,
    LeaderResult,
    FeedForward,
    FollowerRequest,
    FollowerResult,
    Verdict,
}

impl Stage {
    fn expects(self) -> FrameKind {
        match self {
            Stage::Idle => FrameKind::RoundStart,
            Stage::LeaderRequest | Stage::FollowerRequest => FrameKind::MeasureRequest,
            Stage::LeaderResult | Stage::FollowerResult => FrameKind::MeasureResult,
            Stage::FeedForward => FrameKind::FeedForward,
            Stage::Verdict => FrameKind::Verdict,
        }
    }

    fn next(self) -> Stage {
        match self {
            Stage::Idle => Stage::LeaderRequest,
            Stage::LeaderRequest => Stage::LeaderResult,
            Stage::LeaderResult => Stage::FeedForward,
            Stage::FeedForward => Stage::FollowerRequest,
            Stage::FollowerRequest => Stage::FollowerResult,
            Stage::FollowerResult => Stage::Verdict,
            Stage::Verdict => Stage::Idle,
        }
    }
}

/// Tracks the round grammar; every actor owns one.
#[derive(Clone, Debug, Default)]
struct Cursor {
    stage: Stage,
    round: u32,
    started: bool,
}

impl Cursor {
    fn advance(&mut self, frame: &Frame) -> std::result::Result<(), ProtocolError> {
        let grammar = |detail: String| ProtocolError::Grammar { round: self.round, detail };
        if let Frame::SessionEnd { .. } = frame {
            return if self.stage == Stage::Idle {
                Ok(())
            } else {
                Err(grammar(format!("session_end while expecting {}", self.stage.expects())))
            };
        }
        if frame.kind() != self.stage.expects() {
            return Err(grammar(format!("{} while expecting {}", frame.kind(), self.stage.expects())));
        }
        let want_round = if self.stage == Stage::Idle && self.started { self.round + 1 } else { self.round };
        if frame.round() != want_round {
            return Err(grammar(format!("{} for round {}, expected {want_round}", frame.kind(), frame.round())));
        }
        if self.stage == Stage::Idle {
            self.round = want_round;
            self.started = true;
        }
        self.stage = self.stage.next();
        Ok(())
    }
}

/// Role of a party in the current round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
}

/// Observable state of Alice or Bob.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartyState {
    pub role: Option<Role>,
    pub setting: Option<u8>,
    pub direction: Option<Direction>,
    pub pending_outcome: Option<u8>,
    pub rounds: u32,
    pub accepts: u32,
}

struct PartyActor {
    party: Party,
    book: SettingBook,
    cursor: Cursor,
    state: PartyState,
}

impl PartyActor {
    fn new(party: Party, book: SettingBook) -> Self {
        PartyActor { party, book, cursor: Cursor::default(), state: PartyState::default() }
    }

    fn current_setting(&self) -> &MeasurementSetting {
        let (d, l) = (self.state.direction.expect("round started"), self.state.setting.expect("round started"));
        self.book.setting(d, l).expect("index checked at decode")
    }

    fn handle(&mut self, frame: &Frame) -> std::result::Result<Option<Frame>, ProtocolError> {
        self.cursor.advance(frame)?;
        let me = self.party;
        Ok(match *frame {
            Frame::RoundStart { round, setting, direction } => {
                let leads = direction.leader() == me;
                self.state.role = Some(if leads { Role::Leader } else { Role::Follower });
                self.state.setting = Some(setting);
                self.state.direction = Some(direction);
                self.state.pending_outcome = None;
                leads.then(|| Frame::MeasureRequest {
                    round,
                    party: me,
                    projector: self.current_setting().leader_projectors[1],
                })
            }
            Frame::MeasureResult { round, party, outcome } if party == me => match self.state.role {
                Some(Role::Leader) => {
                    self.state.pending_outcome = Some(outcome);
                    Some(Frame::FeedForward { round, outcome })
                }
                _ => Some(Frame::Verdict { round, accept: outcome == 1 }),
            },
            Frame::FeedForward { round, outcome } if self.state.role == Some(Role::Follower) => {
                self.state.pending_outcome = Some(outcome);
                Some(Frame::MeasureRequest {
                    round,
                    party: me,
                    projector: self.current_setting().follower_accept[outcome as usize],
                })
            }
            Frame::Verdict { accept, .. } => {
                self.state.rounds += 1;
                self.state.accepts += u32::from(accept);
                self.state.role = None;
                None
            }
            _ => None,
        })
    }
}

/// Observable state of the referee for the round in progress.
#[derive(Clone, Debug)]
pub struct RefereeState {
    /// Joint state handed out at the start of every round.
    pub sigma: DensityMatrix,
    /// Post-measurement state after the leader's outcome.
    pub conditioned: Option<DensityMatrix>,
    pub leader_outcome: Option<u8>,
}

struct Referee {
    book: SettingBook,
    mode: SessionMode,
    rng: ChaCha8Rng,
    rounds: u32,
    cursor: Cursor,
    state: RefereeState,
    round: u32,
    direction: Direction,
    setting: u8,
    record: TrialRecord,
}

impl Referee {
    fn start_round(&mut self) -> Frame {
        self.direction = match self.mode {
            SessionMode::Fixed(d) => d,
            SessionMode::RoleSwitching => {
                if self.rng.gen::<f64>() < 0.5 {
                    Direction::AliceToBob
                } else {
                    Direction::BobToAlice
                }
            }
        };
        let settings = self.book.strategy(self.direction).settings();
        self.setting = pick_index(settings.iter().map(|s| s.probability), self.rng.gen::<f64>()) as u8;
        self.state.conditioned = None;
        self.state.leader_outcome = None;
        Frame::RoundStart { round: self.round, setting: self.setting, direction: self.direction }
    }

    fn handle(&mut self, frame: &Frame) -> std::result::Result<Option<Frame>, ProtocolError> {
        self.cursor.advance(frame)?;
        let round = self.round;
        let grammar = |detail: String| ProtocolError::Grammar { round, detail };
        let setting = self.book.setting(self.direction, self.setting).expect("drawn by referee").clone();
        Ok(match *frame {
            Frame::MeasureRequest { party, projector, .. } if party == self.direction.leader() => {
                if projector != setting.leader_projectors[1] {
                    return Err(grammar(format!(
                        "leader requested {projector:?}, setting measures {:?}",
                        setting.leader_projectors[1]
                    )));
                }
                let (outcome, conditioned) = leader_branch(&setting, &self.state.sigma, self.rng.gen::<f64>());
                self.state.conditioned = Some(conditioned);
                self.state.leader_outcome = Some(outcome);
                Some(Frame::MeasureResult { round, party, outcome })
            }
            Frame::MeasureRequest { party, projector, .. } => {
                let conditioned = self.state.conditioned.expect("leader measured");
                let a = self.state.leader_outcome.expect("leader measured");
                // Honour whatever the follower asked for.
                let q = if projector == setting.follower_accept[a as usize] {
                    follower_accept_probability(&setting, a, &conditioned)
                } else {
                    party.embed(&projector.projector(setting_theta(&self.book))).trace_product(conditioned.matrix()).re
                };
                let pass = u8::from(self.rng.gen::<f64>() < q);
                Some(Frame::MeasureResult { round, party, outcome: pass })
            }
            Frame::Verdict { accept, .. } => {
                self.record.bits.push(accept);
                self.record.settings.push(self.setting);
                if self.mode == SessionMode::RoleSwitching {
                    self.record.directions.push(self.direction);
                }
                if self.round + 1 < self.rounds {
                    self.round += 1;
                    Some(self.start_round())
                } else {
                    Some(Frame::SessionEnd {
                        rounds: self.record.bits.len() as u32,
                        accepts: self.record.accepts() as u32,
                    })
                }
            }
            _ => None,
        })
    }
}

fn setting_theta(book: &SettingBook) -> f64 {
    book.a_to_b.theta_deg()
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

/// One delivered frame as logged: `{round, frame, party, payload}`.
/// `party` is the sender. For `session_end`, `round` holds the completed
/// rounds and `payload` the accept count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub round: u32,
    pub frame: FrameKind,
    pub party: Sender,
    pub payload: u32,
}

impl TranscriptEntry {
    pub fn new(sender: Sender, frame: &Frame) -> Self {
        let payload = match frame {
            Frame::SessionEnd { accepts, .. } => *accepts,
            f => u32::from(f.payload()),
        };
        TranscriptEntry { round: frame.round(), frame: frame.kind(), party: sender, payload }
    }

    pub fn to_frame(&self) -> std::result::Result<Frame, String> {
        match self.frame {
            FrameKind::SessionEnd => Frame::from_parts(self.frame.tag(), self.round, 0, self.payload),
            _ => {
                let payload = u8::try_from(self.payload).map_err(|_| format!("payload {} exceeds one byte", self.payload))?;
                Frame::from_parts(self.frame.tag(), self.round, payload, 0)
            }
        }
    }
}

pub fn write_transcript<W: Write>(mut out: W, log: &[TranscriptEntry]) -> io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcript<R: BufRead>(input: R) -> Result<Vec<TranscriptEntry>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line)
                .map_err(|e| QsvError::Domain(format!("transcript line {}: {e}", i + 1)))
        })
        .collect()
}

/// Outcome of a session. `abort` is set when the session stopped early; the
/// record then holds the completed rounds only.
#[derive(Clone, Debug)]
pub struct Session {
    pub mode: SessionMode,
    pub theta_deg: f64,
    pub record: TrialRecord,
    pub transcript: Vec<TranscriptEntry>,
    pub alice: PartyState,
    pub bob: PartyState,
    pub abort: Option<ProtocolError>,
}

impl Session {
    pub fn into_result(self) -> std::result::Result<Session, ProtocolError> {
        match self.abort.clone() {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self.mode {
            SessionMode::Fixed(d) => StrategyKind::UniLocc(d),
            SessionMode::RoleSwitching => StrategyKind::BiLocc,
        }
    }

    /// `{rounds, accepts, realized_lambda2}`.
    pub fn summary(&self) -> Result<SessionSummary> {
        let realized = realized_operator(self.theta_deg, self.kind(), &self.record)?;
        Ok(SessionSummary {
            rounds: self.record.n(),
            accepts: self.record.accepts(),
            realized_lambda2: realized.implied_lambda2,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub rounds: u64,
    pub accepts: u64,
    pub realized_lambda2: f64,
}

/// Runs trial `trial_index` of `config` as a message-passing session over
/// `link`. `config.strategy` selects the mode: `uni`/`uni_ba` fix the
/// direction, `bi` switches roles per round.
///
/// With a fixed direction the RNG is consumed exactly as by
/// [`crate::simulator::run_trial`], so both produce the same record.
pub fn run_session<L: Link + ?Sized>(config: &TrialConfig, trial_index: u64, link: &mut L) -> Result<Session> {
    config.validate()?;
    let mode = SessionMode::for_kind(config.strategy)?;
    let rounds = u32::try_from(config.measurements_per_trial)
        .map_err(|_| QsvError::Domain("sessions are limited to 2^32 - 1 rounds".into()))?;
    let book = SettingBook::new(config.theta_deg)?;
    let sigma = apply_noise(config.theta_deg, &config.noise)?;
    let seed = trial_seed(config.master_seed, trial_index);

    let mut referee = Referee {
        book: book.clone(),
        mode,
        rng: trial_rng(seed),
        rounds,
        cursor: Cursor::default(),
        state: RefereeState { sigma, conditioned: None, leader_outcome: None },
        round: 0,
        direction: Direction::AliceToBob,
        setting: 0,
        record: TrialRecord {
            trial_index,
            seed,
            bits: Vec::with_capacity(rounds as usize),
            settings: Vec::with_capacity(rounds as usize),
            directions: Vec::new(),
        },
    };
    let mut alice = PartyActor::new(Party::Alice, book.clone());
    let mut bob = PartyActor::new(Party::Bob, book);

    let mut transcript = Vec::with_capacity(rounds as usize * 7 + 1);
    let mut queue = VecDeque::from([(Sender::Referee, referee.start_round())]);
    let mut abort = None;

    while let Some((sender, outgoing)) = queue.pop_front() {
        let frame = match link.transmit(&outgoing) {
            Ok(f) => f,
            Err(fault) => {
                let round = outgoing.round();
                abort = Some(match fault {
                    LinkFault::Closed => ProtocolError::ChannelClosed { round },
                    LinkFault::Malformed(detail) => ProtocolError::Malformed { round, detail },
                });
                break;
            }
        };
        transcript.push(TranscriptEntry::new(sender, &frame));
        if let Frame::SessionEnd { .. } = frame {
            break;
        }
        let replies = [
            (Sender::Referee, referee.handle(&frame)),
            (Sender::Alice, alice.handle(&frame)),
            (Sender::Bob, bob.handle(&frame)),
        ];
        for (who, reply) in replies {
            match reply {
                Ok(Some(f)) => queue.push_back((who, f)),
                Ok(None) => {}
                Err(e) => {
                    abort.get_or_insert(e);
                }
            }
        }
        if abort.is_some() {
            break;
        }
    }

    Ok(Session {
        mode,
        theta_deg: config.theta_deg,
        record: referee.record,
        transcript,
        alice: alice.state,
        bob: bob.state,
        abort,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Frame that cannot be decoded.
    Decode,
    /// Frame out of order, from the wrong sender, or for the wrong round.
    Grammar,
    /// Leader measured something other than the setting's observable.
    LeaderSetting,
    /// Forwarded bit differs from the leader's outcome.
    FeedForward,
    /// Follower projector does not follow the feed-forward mapping.
    ConditionalProjector,
    /// Verdict differs from the follower's outcome.
    Verdict,
    /// Round started but never finished.
    IncompleteRound,
    /// Counts disagree with `SessionEnd` or the trial record.
    Counter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub round: Option<u32>,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Default)]
struct OpenRound {
    round: u32,
    stage: Stage,
    direction: Option<Direction>,
    setting: Option<u8>,
    leader_outcome: Option<u8>,
    follower_pass: Option<u8>,
}

/// Checks a transcript against the round grammar, the feed-forward mapping
/// of `kind` at `theta_deg`, and (optionally) a trial record.
pub fn validate_transcript(
    log: &[TranscriptEntry],
    kind: StrategyKind,
    theta_deg: f64,
    record: Option<&TrialRecord>,
) -> Result<Vec<Violation>> {
    let mode = SessionMode::for_kind(kind)?;
    let book = SettingBook::new(theta_deg)?;
    let mut out = Vec::new();
    let mut v = |round: Option<u32>, kind: ViolationKind, message: String| {
        out.push(Violation { round, kind, message });
    };

    let mut open: Option<OpenRound> = None;
    let mut next_round = 0u32;
    let mut completed = 0u32;
    let mut verdicts: Vec<bool> = Vec::new();
    let mut ended = false;

    for entry in log {
        let frame = match entry.to_frame() {
            Ok(f) => f,
            Err(e) => {
                v(Some(entry.round), ViolationKind::Decode, e);
                continue;
            }
        };
        if ended {
            v(Some(entry.round), ViolationKind::Grammar, format!("{} after session_end", entry.frame));
            continue;
        }
        match frame {
            Frame::RoundStart { round, setting, direction } => {
                if let Some(r) = open.take() {
                    v(Some(r.round), ViolationKind::IncompleteRound, format!("round {} never reached its verdict", r.round));
                }
                if entry.party != Sender::Referee {
                    v(Some(round), ViolationKind::Grammar, format!("round_start sent by {:?}", entry.party));
                }
                if round != next_round {
                    v(Some(round), ViolationKind::Grammar, format!("round {round} started, expected {next_round}"));
                }
                if let SessionMode::Fixed(d) = mode {
                    if d != direction {
                        v(Some(round), ViolationKind::Grammar, format!("direction {direction} in a fixed {d} session"));
                    }
                }
                next_round = round.wrapping_add(1);
                open = Some(OpenRound {
                    round,
                    stage: Stage::LeaderRequest,
                    direction: Some(direction),
                    setting: Some(setting),
                    ..OpenRound::default()
                });
            }
            Frame::SessionEnd { rounds, accepts } => {
                if let Some(r) = open.take() {
                    v(Some(r.round), ViolationKind::IncompleteRound, format!("round {} never reached its verdict", r.round));
                }
                let got_accepts = verdicts.iter().filter(|b| **b).count() as u32;
                if rounds != completed || accepts != got_accepts {
                    v(
                        None,
                        ViolationKind::Counter,
                        format!("session_end reports {rounds} rounds / {accepts} accepts, transcript has {completed} / {got_accepts}"),
                    );
                }
                ended = true;
            }
            _ => {
                let Some(r) = open.as_mut() else {
                    v(Some(frame.round()), ViolationKind::Grammar, format!("{} outside a round", entry.frame));
                    continue;
                };
                if frame.round() != r.round {
                    v(Some(frame.round()), ViolationKind::Grammar, format!("{} tagged round {} inside round {}", entry.frame, frame.round(), r.round));
                }
                if frame.kind() != r.stage.expects() {
                    v(Some(r.round), ViolationKind::Grammar, format!("{} while expecting {}", entry.frame, r.stage.expects()));
                    continue;
                }
                let direction = r.direction.expect("set at round_start");
                let (leader, follower) = (direction.leader(), direction.follower());
                let Some(setting) = book.setting(direction, r.setting.expect("set at round_start")) else {
                    v(Some(r.round), ViolationKind::Grammar, "unknown setting index".into());
                    open = None;
                    continue;
                };
                let expected_sender = match r.stage {
                    Stage::LeaderRequest | Stage::FeedForward => Sender::from(leader),
                    Stage::FollowerRequest | Stage::Verdict => Sender::from(follower),
                    _ => Sender::Referee,
                };
                if entry.party != expected_sender {
                    v(Some(r.round), ViolationKind::Grammar, format!("{} sent by {:?}, expected {:?}", entry.frame, entry.party, expected_sender));
                }
                match (r.stage, frame) {
                    (Stage::LeaderRequest, Frame::MeasureRequest { party, projector, .. }) => {
                        if party != leader || projector != setting.leader_projectors[1] {
                            v(
                                Some(r.round),
                                ViolationKind::LeaderSetting,
                                format!("leader request {party} {projector:?}, setting {} measures {:?} on {leader}", setting.label, setting.leader_projectors[1]),
                            );
                        }
                    }
                    (Stage::LeaderResult, Frame::MeasureResult { party, outcome, .. }) => {
                        if party != leader {
                            v(Some(r.round), ViolationKind::Grammar, format!("leader result addressed to {party}"));
                        }
                        r.leader_outcome = Some(outcome);
                    }
                    (Stage::FeedForward, Frame::FeedForward { outcome, .. }) => {
                        if Some(outcome) != r.leader_outcome {
                            v(Some(r.round), ViolationKind::FeedForward, format!("forwarded {outcome}, leader measured {}", r.leader_outcome.unwrap_or(0)));
                        }
                        r.leader_outcome = Some(outcome);
                    }
                    (Stage::FollowerRequest, Frame::MeasureRequest { party, projector, .. }) => {
                        let a = r.leader_outcome.unwrap_or(0);
                        let want = setting.follower_accept[a as usize];
                        if party != follower || projector != want {
                            v(
                                Some(r.round),
                                ViolationKind::ConditionalProjector,
                                format!(
                                    "setting {} outcome {a}: {party} requested {projector:?}, the feed-forward rule maps it to {want:?} on {follower}",
                                    setting.label
                                ),
                            );
                        }
                    }
                    (Stage::FollowerResult, Frame::MeasureResult { party, outcome, .. }) => {
                        if party != follower {
                            v(Some(r.round), ViolationKind::Grammar, format!("follower result addressed to {party}"));
                        }
                        r.follower_pass = Some(outcome);
                    }
                    (Stage::Verdict, Frame::Verdict { accept, .. }) => {
                        if Some(u8::from(accept)) != r.follower_pass {
                            v(Some(r.round), ViolationKind::Verdict, format!("verdict {accept} contradicts follower outcome"));
                        }
                        verdicts.push(accept);
                        completed += 1;
                        open = None;
                        continue;
                    }
                    _ => unreachable!("frame kind matched stage"),
                }
                r.stage = r.stage.next();
            }
        }
    }
    if let Some(r) = open {
        v(Some(r.round), ViolationKind::IncompleteRound, format!("round {} never reached its verdict", r.round));
    }
    if let Some(rec) = record {
        if rec.bits != verdicts {
            let m = verdicts.iter().filter(|b| **b).count();
            v(
                None,
                ViolationKind::Counter,
                format!("record has {} rounds / {} accepts, transcript verdicts {} / {m}", rec.n(), rec.accepts(), verdicts.len()),
            );
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Realized operator
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingTally {
    pub direction: Direction,
    pub setting: u8,
    pub rounds: u64,
    pub accepts: u64,
    pub frequency: f64,
}

/// Empirical `Σ p̂_l M_l` of a session compared with the intended operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedOperatorReport {
    pub tallies: Vec<SettingTally>,
    /// Row-major `[re, im]` pairs.
    pub omega: Vec<Vec<[f64; 2]>>,
    pub spectrum: [f64; 4],
    pub implied_lambda2: f64,
    /// Intended operator: the Uni operator of a fixed direction, or the
    /// Bi effective operator for role-switching sessions.
    pub intended_lambda2: f64,
    pub frobenius_distance: f64,
    pub low_confidence: bool,
}

/// Estimates the operator a session actually realized from its per-round
/// setting (and direction) trace.
pub fn realized_operator(theta_deg: f64, kind: StrategyKind, record: &TrialRecord) -> Result<RealizedOperatorReport> {
    let mode = SessionMode::for_kind(kind)?;
    let book = SettingBook::new(theta_deg)?;
    if record.settings.len() != record.bits.len() {
        return Err(QsvError::Domain("record carries no per-round setting trace".into()));
    }
    let n = record.n();
    if n == 0 {
        return Err(QsvError::Domain("empty session".into()));
    }
    let direction_of = |i: usize| match mode {
        SessionMode::Fixed(d) => Ok(d),
        SessionMode::RoleSwitching => record
            .directions
            .get(i)
            .copied()
            .ok_or_else(|| QsvError::Domain("record carries no per-round direction trace".into())),
    };
    let mut counts: BTreeMap<(u8, u8), (u64, u64)> = BTreeMap::new();
    for (i, (&l, &bit)) in record.settings.iter().zip(&record.bits).enumerate() {
        let d = direction_of(i)?;
        let key = (u8::from(d == Direction::BobToAlice), l);
        let c = counts.entry(key).or_default();
        c.0 += 1;
        c.1 += u64::from(bit);
    }
    let directions: &[Direction] = match mode {
        SessionMode::Fixed(Direction::AliceToBob) => &[Direction::AliceToBob],
        SessionMode::Fixed(Direction::BobToAlice) => &[Direction::BobToAlice],
        SessionMode::RoleSwitching => &[Direction::AliceToBob, Direction::BobToAlice],
    };

    let mut omega = Matrix4::zero();
    let mut tallies = Vec::new();
    let mut low_confidence = false;
    for &d in directions {
        for (l, s) in book.strategy(d).settings().iter().enumerate() {
            let key = (u8::from(d == Direction::BobToAlice), l as u8);
            let (rounds, accepts) = counts.get(&key).copied().unwrap_or_default();
            let frequency = rounds as f64 / n as f64;
            low_confidence |= rounds < MIN_ROUNDS_PER_SETTING;
            omega = omega + s.accept_operator().matrix().scale(frequency);
            tallies.push(SettingTally { direction: d, setting: l as u8, rounds, accepts, frequency });
        }
    }
    let realized = HermitianOperator::new(omega)?;
    let intended = match mode {
        SessionMode::Fixed(d) => book.strategy(d).clone(),
        SessionMode::RoleSwitching => Strategy::bi_locc(theta_deg)?,
    };
    let spectrum = realized.eigh().values;
    Ok(RealizedOperatorReport {
        tallies,
        omega: realized.matrix().to_re_im_rows(),
        spectrum,
        implied_lambda2: spectrum[1],
        intended_lambda2: intended.lambda2(),
        frobenius_distance: realized.frobenius_distance(intended.omega()),
        low_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::expectation;
    use crate::simulator::{run_trial, NoiseModel};

    fn config(kind: StrategyKind, noise: NoiseModel, rounds: u64, seed: u64) -> TrialConfig {
        let mut c = TrialConfig::standard(60.0, kind, noise, seed);
        c.measurements_per_trial = rounds;
        c.trials = 1;
        c
    }

    const UNI: StrategyKind = StrategyKind::UniLocc(Direction::AliceToBob);

    #[test]
    fn frame_round_trip() {
        let frames = [
            Frame::RoundStart { round: 7, setting: 2, direction: Direction::BobToAlice },
            Frame::MeasureRequest { round: 1 << 20, party: Party::Bob, projector: ProjectorName::MirrorOmegaMinus },
            Frame::MeasureResult { round: 0, party: Party::Alice, outcome: 1 },
            Frame::FeedForward { round: 3, outcome: 0 },
            Frame::Verdict { round: u32::MAX, accept: true },
            Frame::SessionEnd { rounds: 100, accepts: 98 },
        ];
        for f in frames {
            let bytes = f.encode();
            assert_eq!(Frame::decode(&bytes).unwrap(), (f, bytes.len()));
        }
    }

    #[test]
    fn frame_bytes_are_fixed() {
        let f = Frame::MeasureRequest { round: 0x0102_0304, party: Party::Bob, projector: ProjectorName::V };
        assert_eq!(f.encode(), vec![2, 0x04, 0x03, 0x02, 0x01, 0x81]);
        let end = Frame::SessionEnd { rounds: 5, accepts: 4 };
        assert_eq!(end.encode(), vec![6, 5, 0, 0, 0, 0, 4, 0, 0, 0]);
        let start = Frame::RoundStart { round: 1, setting: 1, direction: Direction::BobToAlice };
        assert_eq!(start.encode(), vec![1, 1, 0, 0, 0, 0x81]);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(Frame::decode(&[9, 0, 0, 0, 0, 0]).is_err());
        assert!(Frame::decode(&[1, 0, 0]).is_err());
        assert!(Frame::decode(&[3, 0, 0, 0, 0, 2]).is_err());
        assert!(Frame::decode(&[2, 0, 0, 0, 0, 14]).is_err());
        assert!(Frame::decode(&[6, 0, 0, 0, 0, 0, 1]).is_err());
    }

    #[test]
    fn ideal_uni_session() {
        let s = run_session(&config(UNI, NoiseModel::Ideal, 100, 1), 0, &mut MemoryLink).unwrap();
        assert!(s.abort.is_none());
        assert_eq!(s.record.accepts(), 100);
        assert_eq!(s.transcript.len(), 100 * 7 + 1);
        assert_eq!(s.alice.rounds, 100);
        assert_eq!(s.bob.accepts, 100);
        assert!(validate_transcript(&s.transcript, UNI, 60.0, Some(&s.record)).unwrap().is_empty());
    }

    #[test]
    fn z_outcome_one_sends_follower_to_v() {
        let s = run_session(
            &config(UNI, NoiseModel::Depolarizing { visibility: 0.8 }, 300, 4),
            0,
            &mut MemoryLink,
        )
        .unwrap();
        let mut seen = 0;
        for round in s.transcript.chunks(7).filter(|c| c.len() == 7) {
            let start = round[0].to_frame().unwrap();
            let result = round[2].to_frame().unwrap();
            if let (Frame::RoundStart { setting: 2, .. }, Frame::MeasureResult { outcome: 1, .. }) = (start, result) {
                let request = round[4].to_frame().unwrap();
                assert_eq!(
                    request,
                    Frame::MeasureRequest { round: start.round(), party: Party::Bob, projector: ProjectorName::V }
                );
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn session_matches_simulator_trial() {
        for kind in [UNI, StrategyKind::UniLocc(Direction::BobToAlice)] {
            let cfg = config(kind, NoiseModel::Depolarizing { visibility: 0.85 }, 400, 9);
            let via_sim = run_trial(&cfg, 3).unwrap();
            let mem = run_session(&cfg, 3, &mut MemoryLink).unwrap();
            let bytes = run_session(&cfg, 3, &mut ByteLink::new()).unwrap();
            assert_eq!(mem.record, via_sim);
            assert_eq!(bytes.record, mem.record);
            assert_eq!(bytes.transcript, mem.transcript);
        }
    }

    #[test]
    fn stream_link_over_socket_pair() {
        #[cfg(unix)]
        {
            use std::os::unix::net::UnixStream;
            let (a, b) = UnixStream::pair().unwrap();
            let mut link = StreamLink::new(a, b);
            let cfg = config(StrategyKind::BiLocc, NoiseModel::Dephasing { p: 0.2 }, 200, 5);
            let s = run_session(&cfg, 0, &mut link).unwrap();
            let mem = run_session(&cfg, 0, &mut MemoryLink).unwrap();
            assert_eq!(s.record, mem.record);
        }
    }

    #[test]
    fn closed_channel_aborts_with_partial_record() {
        let cfg = config(UNI, NoiseModel::Ideal, 50, 2);
        let mut link = ClosingLink::new(MemoryLink, 7 * 10 + 3);
        let s = run_session(&cfg, 0, &mut link).unwrap();
        assert_eq!(s.abort, Some(ProtocolError::ChannelClosed { round: 10 }));
        assert_eq!(s.record.n(), 10);
        let violations = validate_transcript(&s.transcript, UNI, 60.0, Some(&s.record)).unwrap();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].kind, ViolationKind::IncompleteRound);
        assert_eq!(violations[0].round, Some(10));
    }

    #[test]
    fn truncated_byte_stream_is_malformed() {
        let cfg = config(UNI, NoiseModel::Ideal, 20, 2);
        let mut link = ByteLink::truncated_after(FRAME_LEN * 15 + 2);
        let s = run_session(&cfg, 0, &mut link).unwrap();
        match s.abort {
            Some(ProtocolError::Malformed { round, .. }) => assert_eq!(round, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.record.n(), 2);
    }

    #[test]
    fn wrong_conditional_projector_is_flagged() {
        let cfg = config(UNI, NoiseModel::Depolarizing { visibility: 0.9 }, 200, 6);
        let s = run_session(&cfg, 0, &mut MemoryLink).unwrap();
        let mut log = s.transcript.clone();
        let idx = log
            .chunks(7)
            .position(|r| r.len() == 7 && r[0].payload & 0x7f == 2 && r[2].payload & 1 == 1)
            .expect("a Z round with outcome 1");
        let entry = &mut log[idx * 7 + 4];
        entry.payload = (entry.payload & 0x80) | u32::from(ProjectorName::H.code());
        let violations = validate_transcript(&log, UNI, 60.0, Some(&s.record)).unwrap();
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].kind, ViolationKind::ConditionalProjector);
        assert!(violations[0].message.contains("V"));
    }

    #[test]
    fn counter_mismatch_is_flagged() {
        let s = run_session(&config(UNI, NoiseModel::Ideal, 10, 1), 0, &mut MemoryLink).unwrap();
        let mut rec = s.record.clone();
        rec.bits[3] = false;
        let v = validate_transcript(&s.transcript, UNI, 60.0, Some(&rec)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Counter);
        let mut log = s.transcript.clone();
        log.last_mut().unwrap().payload = 3;
        let v = validate_transcript(&log, UNI, 60.0, None).unwrap();
        assert_eq!(v[0].kind, ViolationKind::Counter);
    }

    #[test]
    fn reordered_frames_are_grammar_violations() {
        let s = run_session(&config(UNI, NoiseModel::Ideal, 3, 1), 0, &mut MemoryLink).unwrap();
        let mut log = s.transcript.clone();
        log.swap(2, 3);
        let v = validate_transcript(&log, UNI, 60.0, None).unwrap();
        assert!(v.iter().any(|x| x.kind == ViolationKind::Grammar));
    }

    #[test]
    fn role_switching_session() {
        let cfg = config(StrategyKind::BiLocc, NoiseModel::Ideal, 400, 3);
        let s = run_session(&cfg, 0, &mut MemoryLink).unwrap();
        assert_eq!(s.record.accepts(), 400);
        assert_eq!(s.record.directions.len(), 400);
        let bob_leads = s.record.directions.iter().filter(|d| **d == Direction::BobToAlice).count();
        assert!((150..250).contains(&bob_leads));
        assert!(validate_transcript(&s.transcript, StrategyKind::BiLocc, 60.0, Some(&s.record)).unwrap().is_empty());
        let report = realized_operator(60.0, StrategyKind::BiLocc, &s.record).unwrap();
        assert_eq!(report.tallies.len(), 6);
        assert!((report.intended_lambda2 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn realized_operator_uni() {
        let cfg = config(UNI, NoiseModel::Ideal, 20_000, 8);
        let s = run_session(&cfg, 0, &mut MemoryLink).unwrap();
        let r = realized_operator(60.0, UNI, &s.record).unwrap();
        assert!(!r.low_confidence);
        assert!(r.frobenius_distance < 0.03, "{}", r.frobenius_distance);
        assert!((r.implied_lambda2 - 3.0 / 7.0).abs() < 0.03);
        let short = run_session(&config(UNI, NoiseModel::Ideal, 12, 8), 0, &mut MemoryLink).unwrap();
        assert!(realized_operator(60.0, UNI, &short.record).unwrap().low_confidence);
    }

    #[test]
    fn uni_session_accept_frequency() {
        let v = 0.9;
        let cfg = config(UNI, NoiseModel::Depolarizing { visibility: v }, 20_000, 12);
        let s = run_session(&cfg, 0, &mut MemoryLink).unwrap();
        let sigma = apply_noise(60.0, &cfg.noise).unwrap();
        let p = expectation(Strategy::uni_locc(60.0, Direction::AliceToBob).unwrap().omega(), &sigma);
        assert!((p - (v + (1.0 - v) * 0.5)).abs() < 1e-12);
        let n = s.record.n() as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!((s.record.accepts() as f64 / n - p).abs() < 3.0 * sd);
    }

    #[test]
    fn unsupported_strategies() {
        for kind in [StrategyKind::Lo, StrategyKind::Global] {
            assert!(matches!(
                run_session(&config(kind, NoiseModel::Ideal, 5, 1), 0, &mut MemoryLink),
                Err(QsvError::Unsupported(_))
            ));
        }
    }

    #[test]
    fn transcript_jsonl_round_trip() {
        let s = run_session(&config(UNI, NoiseModel::Ideal, 4, 1), 0, &mut MemoryLink).unwrap();
        let mut buf = Vec::new();
        write_transcript(&mut buf, &s.transcript).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"round":0,"frame":"round_start","party":"referee","payload":"#));
        assert_eq!(read_transcript(&buf[..]).unwrap(), s.transcript);
    }

    #[test]
    fn summary_json_shape() {
        let s = run_session(&config(UNI, NoiseModel::Ideal, 100, 1), 0, &mut MemoryLink).unwrap();
        let v = serde_json::to_value(s.summary().unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, ["accepts", "realized_lambda2", "rounds"]);
        assert_eq!(v["accepts"], 100);
    }
}
