//! Verification strategies for `|Ψ(θ)> = cosθ|HV> - sinθ|VH>`.
//!
//! A strategy is a distribution `{p_l}` over two-outcome local measurements
//! `M_l` whose pass element accepts the target with certainty. Its effective
//! operator `Ω = Σ p_l M_l` and the second-largest eigenvalue `λ₂(Ω)` set the
//! sample complexity.
//!
//! Four families are provided:
//!
//! | kind      | realisation                                     | `λ₂`                    |
//! |-----------|-------------------------------------------------|-------------------------|
//! | `Lo`      | spectral surrogate `P + λ₂(I - P)`              | `(2+sin2θ)/(4+sin2θ)`   |
//! | `UniLocc` | Pauli X/Y/Z on the leader, conditional follower | `sin²θ/(1+sin²θ)`       |
//! | `BiLocc`  | effective operator `P + (I - P)/3`              | `1/3`                   |
//! | `Global`  | entangled projector `P = |Ψ><Ψ|`                | `0`                     |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QsvError, Result};
use crate::quantum::{
    target_state, HermitianOperator, Matrix4, Operator2, Qubit, Tensor, C64,
};

/// Open interval of θ (degrees) on which the adaptive constructions hold.
pub const ADAPTIVE_RANGE: (f64, f64) = (45.0, 90.0);
/// Open interval of θ (degrees) on which the target is entangled.
pub const ENTANGLED_RANGE: (f64, f64) = (0.0, 90.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }

    /// Lifts a single-qubit operator onto this party's tensor factor.
    pub fn embed(self, op: &Operator2) -> Matrix4 {
        match self {
            Party::Alice => op.tensor(&Operator2::identity()),
            Party::Bob => Operator2::identity().tensor(op),
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        })
    }
}

/// Direction of the classical feed-forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_b")]
    AliceToBob,
    #[serde(rename = "b_to_a")]
    BobToAlice,
}

impl Direction {
    pub fn leader(self) -> Party {
        match self {
            Direction::AliceToBob => Party::Alice,
            Direction::BobToAlice => Party::Bob,
        }
    }

    pub fn follower(self) -> Party {
        self.leader().other()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AliceToBob => "a_to_b",
            Direction::BobToAlice => "b_to_a",
        })
    }
}

/// Named single-qubit projectors used by the adaptive settings. The numeric
/// code is the identifier carried on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ProjectorName {
    H = 0,
    V = 1,
    Plus = 2,
    Minus = 3,
    R = 4,
    L = 5,
    /// `sinθ|H> - cosθ|V>`
    UpsilonPlus = 6,
    /// `sinθ|H> + cosθ|V>`
    UpsilonMinus = 7,
    /// `sinθ|H> + i cosθ|V>`
    OmegaPlus = 8,
    /// `sinθ|H> - i cosθ|V>`
    OmegaMinus = 9,
    /// `cosθ|H> - sinθ|V>`, Alice's counterpart of `UpsilonPlus`.
    MirrorUpsilonPlus = 10,
    /// `cosθ|H> + sinθ|V>`
    MirrorUpsilonMinus = 11,
    /// `cosθ|H> + i sinθ|V>`
    MirrorOmegaPlus = 12,
    /// `cosθ|H> - i sinθ|V>`
    MirrorOmegaMinus = 13,
}

impl ProjectorName {
    pub const ALL: [ProjectorName; 14] = [
        ProjectorName::H,
        ProjectorName::V,
        ProjectorName::Plus,
        ProjectorName::Minus,
        ProjectorName::R,
        ProjectorName::L,
        ProjectorName::UpsilonPlus,
        ProjectorName::UpsilonMinus,
        ProjectorName::OmegaPlus,
        ProjectorName::OmegaMinus,
        ProjectorName::MirrorUpsilonPlus,
        ProjectorName::MirrorUpsilonMinus,
        ProjectorName::MirrorOmegaPlus,
        ProjectorName::MirrorOmegaMinus,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// The state this projector projects onto, for target angle θ.
    pub fn state(self, theta_deg: f64) -> Qubit {
        let (s, c) = theta_deg.to_radians().sin_cos();
        let re = |x: f64| C64::new(x, 0.0);
        let im = |x: f64| C64::new(0.0, x);
        match self {
            ProjectorName::H => Qubit::h(),
            ProjectorName::V => Qubit::v(),
            ProjectorName::Plus => Qubit::plus(),
            ProjectorName::Minus => Qubit::minus(),
            ProjectorName::R => Qubit::r(),
            ProjectorName::L => Qubit::l(),
            ProjectorName::UpsilonPlus => Qubit::normalized(re(s), re(-c)),
            ProjectorName::UpsilonMinus => Qubit::normalized(re(s), re(c)),
            ProjectorName::OmegaPlus => Qubit::normalized(re(s), im(c)),
            ProjectorName::OmegaMinus => Qubit::normalized(re(s), im(-c)),
            ProjectorName::MirrorUpsilonPlus => Qubit::normalized(re(c), re(-s)),
            ProjectorName::MirrorUpsilonMinus => Qubit::normalized(re(c), re(s)),
            ProjectorName::MirrorOmegaPlus => Qubit::normalized(re(c), im(s)),
            ProjectorName::MirrorOmegaMinus => Qubit::normalized(re(c), im(-s)),
        }
    }

    pub fn projector(self, theta_deg: f64) -> Operator2 {
        self.state(theta_deg).projector()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingLabel {
    X,
    Y,
    Z,
    Custom,
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SettingLabel::X => "X",
            SettingLabel::Y => "Y",
            SettingLabel::Z => "Z",
            SettingLabel::Custom => "custom",
        })
    }
}

/// One adaptive two-outcome setting. The leader measures
/// `{leader[1], leader[0]}`; on outcome `a` the follower tests
/// `follower_accept[a]` and a pass is an ACCEPT.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSetting {
    pub label: SettingLabel,
    pub leader: Party,
    /// Indexed by outcome bit.
    pub leader_projectors: [ProjectorName; 2],
    /// Indexed by the leader's outcome bit.
    pub follower_accept: [ProjectorName; 2],
    pub probability: f64,
    theta_deg: f64,
    accept_operator: HermitianOperator,
}

impl MeasurementSetting {
    pub fn new(
        label: SettingLabel,
        leader: Party,
        leader_projectors: [ProjectorName; 2],
        follower_accept: [ProjectorName; 2],
        probability: f64,
        theta_deg: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(QsvError::Domain(format!(
                "setting probability {probability} outside [0, 1]"
            )));
        }
        let completeness = leader_projectors[0].projector(theta_deg)
            + leader_projectors[1].projector(theta_deg);
        if completeness.max_abs_diff(&Operator2::identity()) > 1e-12 {
            return Err(QsvError::Domain(
                "leader projectors do not resolve the identity".into(),
            ));
        }
        let follower = leader.other();
        let m = (0..2).fold(Matrix4::zero(), |acc, a| {
            acc + leader.embed(&leader_projectors[a].projector(theta_deg))
                * follower.embed(&follower_accept[a].projector(theta_deg))
        });
        Ok(MeasurementSetting {
            label,
            leader,
            leader_projectors,
            follower_accept,
            probability,
            theta_deg,
            accept_operator: HermitianOperator::new(m)?,
        })
    }

    pub fn follower(&self) -> Party {
        self.leader.other()
    }

    /// Accept element `M_l = Σ_a Π_a ⊗ Π_follower(a)` (Alice's factor first).
    pub fn accept_operator(&self) -> &HermitianOperator {
        &self.accept_operator
    }

    /// Leader's projector for outcome `a`, lifted to two qubits.
    pub fn leader_operator(&self, outcome: u8) -> Matrix4 {
        self.leader
            .embed(&self.leader_projectors[outcome as usize].projector(self.theta_deg))
    }

    /// Follower's accept projector after leader outcome `a`, lifted.
    pub fn follower_operator(&self, leader_outcome: u8) -> Matrix4 {
        self.follower()
            .embed(&self.follower_accept[leader_outcome as usize].projector(self.theta_deg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Lo,
    UniLocc(Direction),
    BiLocc,
    Global,
    Custom,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Lo => "lo",
            StrategyKind::UniLocc(Direction::AliceToBob) => "uni",
            StrategyKind::UniLocc(Direction::BobToAlice) => "uni_ba",
            StrategyKind::BiLocc => "bi",
            StrategyKind::Global => "global",
            StrategyKind::Custom => "custom",
        }
    }

    pub fn build(&self, theta_deg: f64) -> Result<Strategy> {
        match *self {
            StrategyKind::Lo => Strategy::lo_optimal(theta_deg),
            StrategyKind::UniLocc(d) => Strategy::uni_locc(theta_deg, d),
            StrategyKind::BiLocc => Strategy::bi_locc(theta_deg),
            StrategyKind::Global => Strategy::global(theta_deg),
            StrategyKind::Custom => Err(QsvError::Unsupported(
                "custom strategies are built from an explicit operator".into(),
            )),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = QsvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lo" => Ok(StrategyKind::Lo),
            "uni" | "uni_ab" | "uni_locc" => Ok(StrategyKind::UniLocc(Direction::AliceToBob)),
            "uni_ba" => Ok(StrategyKind::UniLocc(Direction::BobToAlice)),
            "bi" | "bi_locc" => Ok(StrategyKind::BiLocc),
            "global" => Ok(StrategyKind::Global),
            other => Err(QsvError::Domain(format!(
                "unknown strategy '{other}' (expected lo, uni, uni-ba, bi or global)"
            ))),
        }
    }
}

/// How the leading party is chosen each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    None,
    Fixed(Direction),
    /// Alice leads with the given probability, Bob otherwise.
    Random { alice_leads: f64 },
}

/// An immutable verification strategy with its cached spectrum.
#[derive(Clone, Debug)]
pub struct Strategy {
    kind: StrategyKind,
    theta_deg: f64,
    settings: Vec<MeasurementSetting>,
    omega: HermitianOperator,
    spectrum: [f64; 4],
    lambda2: f64,
    direction_policy: DirectionPolicy,
    entangled_measurement: bool,
}

fn check_open_range(theta_deg: f64, (low, high): (f64, f64)) -> Result<()> {
    if theta_deg.is_finite() && theta_deg > low && theta_deg < high {
        Ok(())
    } else {
        Err(QsvError::StrategyRange { theta_deg, low, high })
    }
}

fn sin2(theta_deg: f64) -> f64 {
    theta_deg.to_radians().sin().powi(2)
}

/// `P + λ (I - P)` for the target projector `P`.
fn isotropic_operator(theta_deg: f64, lambda: f64) -> Result<HermitianOperator> {
    let p = target_state(theta_deg)?.projector();
    let rest = Matrix4::identity() - *p.matrix();
    HermitianOperator::new(*p.matrix() + rest.scale(lambda))
}

/// Closed spectral form of the A→B adaptive operator:
/// `|Ψ><Ψ| + a|Ψ⊥><Ψ⊥| + b|VV><VV| + a|HH><HH|` with `a = sin²θ/(1+sin²θ)`
/// and `b = cos²θ/(1+sin²θ)`.
pub fn uni_locc_spectral_form(theta_deg: f64) -> Result<HermitianOperator> {
    use crate::quantum::{orthogonal_state, PureState};
    let s2 = sin2(theta_deg);
    let a = s2 / (1.0 + s2);
    let b = (1.0 - s2) / (1.0 + s2);
    let psi = target_state(theta_deg)?.projector();
    let perp = orthogonal_state(theta_deg)?.projector();
    let vv = PureState::basis(1, 1).projector();
    let hh = PureState::basis(0, 0).projector();
    Ok(HermitianOperator::combine([
        (1.0, &psi),
        (a, &perp),
        (b, &vv),
        (a, &hh),
    ]))
}

/// Uni-LOCC setting probabilities `{1/(2+2sin²θ), 1/(2+2sin²θ), sin²θ/(1+sin²θ)}`
/// for the X, Y and Z settings.
pub fn uni_locc_probabilities(theta_deg: f64) -> [f64; 3] {
    let s2 = sin2(theta_deg);
    let xy = 1.0 / (2.0 + 2.0 * s2);
    [xy, xy, s2 / (1.0 + s2)]
}

/// `λ₂` of the optimal non-adaptive local strategy, `(2+sin2θ)/(4+sin2θ)`.
pub fn lo_optimal_lambda2(theta_deg: f64) -> f64 {
    let s = (2.0 * theta_deg.to_radians()).sin();
    (2.0 + s) / (4.0 + s)
}

impl Strategy {
    fn assemble(
        kind: StrategyKind,
        theta_deg: f64,
        settings: Vec<MeasurementSetting>,
        omega: HermitianOperator,
        lambda2: Option<f64>,
        direction_policy: DirectionPolicy,
    ) -> Strategy {
        let spectrum = omega.eigh().values;
        Strategy {
            kind,
            theta_deg,
            settings,
            omega,
            spectrum,
            lambda2: lambda2.unwrap_or(spectrum[1]),
            direction_policy,
            entangled_measurement: kind == StrategyKind::Global,
        }
    }

    /// Adaptive strategy with one-way feed-forward in direction `direction`.
    ///
    /// For A→B Alice measures Pauli X, Y or Z and Bob tests the conditional
    /// projector. B→A is the same construction with Bob leading; it is the
    /// conjugation of the A→B strategy by `SWAP·(X⊗X)`, which fixes `|Ψ(θ)>`,
    /// so both directions share the same spectrum.
    pub fn uni_locc(theta_deg: f64, direction: Direction) -> Result<Strategy> {
        check_open_range(theta_deg, ADAPTIVE_RANGE)?;
        let [px, py, pz] = uni_locc_probabilities(theta_deg);
        use ProjectorName::*;
        // (label, leader projectors by outcome [0, 1], follower accept by outcome [0, 1], p)
        let table = match direction {
            Direction::AliceToBob => [
                (SettingLabel::X, [Minus, Plus], [UpsilonMinus, UpsilonPlus], px),
                (SettingLabel::Y, [L, R], [OmegaPlus, OmegaMinus], py),
                (SettingLabel::Z, [V, H], [H, V], pz),
            ],
            Direction::BobToAlice => [
                (SettingLabel::X, [Minus, Plus], [MirrorUpsilonMinus, MirrorUpsilonPlus], px),
                (SettingLabel::Y, [L, R], [MirrorOmegaPlus, MirrorOmegaMinus], py),
                (SettingLabel::Z, [V, H], [H, V], pz),
            ],
        };
        let settings = table
            .into_iter()
            .map(|(label, lead, follow, p)| {
                MeasurementSetting::new(label, direction.leader(), lead, follow, p, theta_deg)
            })
            .collect::<Result<Vec<_>>>()?;
        let omega = HermitianOperator::combine(
            settings.iter().map(|s| (s.probability, s.accept_operator())),
        );
        let s2 = sin2(theta_deg);
        Ok(Strategy::assemble(
            StrategyKind::UniLocc(direction),
            theta_deg,
            settings,
            omega,
            Some(s2 / (1.0 + s2)),
            DirectionPolicy::Fixed(direction),
        ))
    }

    /// Bi-directional strategy `|Ψ><Ψ| + (I - |Ψ><Ψ|)/3`, held as an
    /// effective operator. The direction policy records the ½/½ role switch
    /// used by the protocol's demonstration mode.
    pub fn bi_locc(theta_deg: f64) -> Result<Strategy> {
        check_open_range(theta_deg, ADAPTIVE_RANGE)?;
        Ok(Strategy::assemble(
            StrategyKind::BiLocc,
            theta_deg,
            Vec::new(),
            isotropic_operator(theta_deg, 1.0 / 3.0)?,
            Some(1.0 / 3.0),
            DirectionPolicy::Random { alice_leads: 0.5 },
        ))
    }

    /// Optimal non-adaptive local strategy, represented by the spectral
    /// surrogate `|Ψ><Ψ| + λ₂(I - |Ψ><Ψ|)` with the optimal `λ₂`.
    pub fn lo_optimal(theta_deg: f64) -> Result<Strategy> {
        check_open_range(theta_deg, ENTANGLED_RANGE)?;
        let lambda2 = lo_optimal_lambda2(theta_deg);
        Ok(Strategy::assemble(
            StrategyKind::Lo,
            theta_deg,
            Vec::new(),
            isotropic_operator(theta_deg, lambda2)?,
            Some(lambda2),
            DirectionPolicy::None,
        ))
    }

    /// Projection onto the target; needs an entangled measurement.
    pub fn global(theta_deg: f64) -> Result<Strategy> {
        check_open_range(theta_deg, ENTANGLED_RANGE)?;
        Ok(Strategy::assemble(
            StrategyKind::Global,
            theta_deg,
            Vec::new(),
            target_state(theta_deg)?.projector(),
            Some(0.0),
            DirectionPolicy::None,
        ))
    }

    /// Wraps a caller-supplied verification operator. It must accept the
    /// target with certainty.
    pub fn from_operator(theta_deg: f64, omega: HermitianOperator) -> Result<Strategy> {
        check_open_range(theta_deg, ENTANGLED_RANGE)?;
        let psi = target_state(theta_deg)?;
        let on_target = omega.matrix().sandwich(psi.amplitudes(), psi.amplitudes()).re;
        if (on_target - 1.0).abs() > 1e-10 {
            return Err(QsvError::Domain(format!(
                "operator accepts the target with probability {on_target}, expected 1"
            )));
        }
        Ok(Strategy::assemble(
            StrategyKind::Custom,
            theta_deg,
            Vec::new(),
            omega,
            None,
            DirectionPolicy::None,
        ))
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn settings(&self) -> &[MeasurementSetting] {
        &self.settings
    }

    pub fn omega(&self) -> &HermitianOperator {
        &self.omega
    }

    /// Eigenvalues of `Ω` in descending order.
    pub fn spectrum(&self) -> [f64; 4] {
        self.spectrum
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn direction_policy(&self) -> DirectionPolicy {
        self.direction_policy
    }

    /// True when `Ω` can only be realised with an entangled measurement.
    pub fn entangled_measurement(&self) -> bool {
        self.entangled_measurement
    }

    pub fn has_settings(&self) -> bool {
        !self.settings.is_empty()
    }

    /// `1 / (1 - λ₂)`, the overhead relative to the globally optimal bound.
    pub fn constant_factor(&self) -> Result<f64> {
        constant_factor(self.lambda2)
    }

    /// Draws a setting index with probability `p_l`. One uniform variate is
    /// consumed per call.
    pub fn sample_setting<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.settings.is_empty() {
            return Err(QsvError::Unsupported(format!(
                "strategy '{}' has no explicit settings; sample accept events from tr(Ωσ) instead",
                self.kind
            )));
        }
        let u: f64 = rng.gen();
        Ok(pick_index(self.settings.iter().map(|s| s.probability), u))
    }

    pub fn report(&self) -> StrategyReport {
        StrategyReport {
            kind: self.kind.name().to_string(),
            direction: match self.direction_policy {
                DirectionPolicy::Fixed(d) => Some(d.to_string()),
                DirectionPolicy::Random { .. } => Some("random".to_string()),
                DirectionPolicy::None => None,
            },
            theta_deg: self.theta_deg,
            probabilities: self.settings.iter().map(|s| s.probability).collect(),
            settings: self.settings.iter().map(|s| s.label.to_string()).collect(),
            omega: self.omega.matrix().to_re_im_rows(),
            spectrum: self.spectrum,
            lambda2: self.lambda2,
            constant_factor: self.constant_factor().ok(),
            entangled_measurement: self.entangled_measurement,
        }
    }
}

/// Index of the first cumulative weight exceeding `u`; the last index absorbs
/// rounding in the tail.
pub(crate) fn pick_index<I: IntoIterator<Item = f64>>(weights: I, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// `1 / (1 - λ₂)`.
pub fn constant_factor(lambda2: f64) -> Result<f64> {
    if !(lambda2 < 1.0) {
        return Err(QsvError::DegenerateStrategy { lambda2 });
    }
    Ok(1.0 / (1.0 - lambda2))
}

/// JSON description of a strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub kind: String,
    pub direction: Option<String>,
    pub theta_deg: f64,
    pub probabilities: Vec<f64>,
    pub settings: Vec<String>,
    /// Row-major `[re, im]` pairs.
    pub omega: Vec<Vec<[f64; 2]>>,
    pub spectrum: [f64; 4],
    pub lambda2: f64,
    pub constant_factor: Option<f64>,
    pub entangled_measurement: bool,
}
