//! The three view-instruction paradigms (natural language, discrete
//! directives, numerical 6-DOF) and their canonical text renderings.
//!
//! The numerical grammar is bit-exact and round-trips on a quantized grid of
//! 0.01 m for translations and 0.1° for angles:
//!
//! ```text
//! move x:{±d.dd}m y:{±d.dd}m z:{±d.dd}m, rotate yaw:{±d.d}deg pitch:{±d.d}deg roll:{±d.d}deg
//! ```

use crate::geometry::CameraMotion;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Translations beyond this magnitude are rejected as implausible.
pub const MAX_TRANSLATION_METERS: f64 = 50.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InstructionError {
    #[error("missing fields in lenient parse: {0:?}")]
    MissingField(Vec<&'static str>),
    #[error("text does not parse as a camera motion")]
    Malformed,
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("unknown directive: {0}")]
    UnknownDirective(String),
    #[error("natural instruction is empty")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionFormat {
    Natural,
    Discrete,
    Numerical,
}

impl InstructionFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstructionFormat::Natural => "natural",
            InstructionFormat::Discrete => "discrete",
            InstructionFormat::Numerical => "numerical",
        }
    }
}

impl std::str::FromStr for InstructionFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "natural" => Ok(InstructionFormat::Natural),
            "discrete" => Ok(InstructionFormat::Discrete),
            "numerical" => Ok(InstructionFormat::Numerical),
            other => Err(format!("unknown instruction format: {other}")),
        }
    }
}

/// A categorical camera directive from a closed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDirective {
    pub name: String,
    /// Linear scale applied to the table's canonical motion.
    pub magnitude_override: Option<f64>,
}

impl DiscreteDirective {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            magnitude_override: None,
        }
    }

    pub fn with_magnitude(name: impl Into<String>, magnitude: f64) -> Self {
        Self {
            name: name.into(),
            magnitude_override: Some(magnitude),
        }
    }
}

/// One planner-to-synthesizer instruction in one of the three formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewInstruction {
    Natural { text: String },
    Discrete { directive: DiscreteDirective },
    Numerical { motion: CameraMotion },
}

impl ViewInstruction {
    pub fn natural(text: impl Into<String>) -> Result<Self, InstructionError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(InstructionError::EmptyText);
        }
        Ok(ViewInstruction::Natural { text })
    }

    /// The exact text handed to the synthesizer. Natural text passes through
    /// verbatim; numerical motions render in the canonical grammar (pure
    /// geometry, no scene tokens).
    pub fn synthesizer_text(&self) -> String {
        match self {
            ViewInstruction::Natural { text } => text.clone(),
            ViewInstruction::Discrete { directive } => {
                let base = directive.name.replace('_', " ");
                match directive.magnitude_override {
                    Some(mag) => format!("{base} (x{mag:.2})"),
                    None => base,
                }
            }
            ViewInstruction::Numerical { motion } => render_numerical(motion),
        }
    }
}

/// Snaps translations to 0.01 m and angles to 0.1°, the grid on which the
/// canonical grammar round-trips exactly.
pub fn quantize_motion(m: &CameraMotion) -> CameraMotion {
    let qt = |v: f64| (v * 100.0).round() / 100.0 + 0.0;
    let qa = |v: f64| (v * 10.0).round() / 10.0 + 0.0;
    CameraMotion {
        dx: qt(m.dx),
        dy: qt(m.dy),
        dz: qt(m.dz),
        yaw: qa(m.yaw),
        pitch: qa(m.pitch),
        roll: qa(m.roll),
    }
}

/// Renders a normalized motion in the canonical single-line grammar.
pub fn render_numerical(m: &CameraMotion) -> String {
    let q = quantize_motion(m);
    format!(
        "move x:{:+.2}m y:{:+.2}m z:{:+.2}m, rotate yaw:{:+.1}deg pitch:{:+.1}deg roll:{:+.1}deg",
        q.dx, q.dy, q.dz, q.yaw, q.pitch, q.roll
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Accepts only the canonical grammar.
    Strict,
    /// Tries the canonical grammar first, then extracts six labeled numbers
    /// in any order from free text. All six DOFs must be present.
    Lenient,
}

fn strict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^move x:([+-]\d+\.\d{2})m y:([+-]\d+\.\d{2})m z:([+-]\d+\.\d{2})m, rotate yaw:([+-]\d+\.\d)deg pitch:([+-]\d+\.\d)deg roll:([+-]\d+\.\d)deg$",
        )
        .expect("strict grammar regex")
    })
}

fn lenient_res() -> &'static [(usize, Regex); 6] {
    static RES: OnceLock<[(usize, Regex); 6]> = OnceLock::new();
    RES.get_or_init(|| {
        let num = r"([+-]?(?:\d+(?:\.\d+)?|\.\d+))";
        let build = |label: &str| {
            Regex::new(&format!(
                r"(?i)(?:^|[^a-z0-9_]){label}\s*[:=]?\s*{num}"
            ))
            .expect("lenient regex")
        };
        [
            (0, build(r"(?:Δ\s*|delta\s*|d)?x")),
            (1, build(r"(?:Δ\s*|delta\s*|d)?y")),
            (2, build(r"(?:Δ\s*|delta\s*|d)?z")),
            (3, build("yaw")),
            (4, build("pitch")),
            (5, build("roll")),
        ]
    })
}

const DOF_NAMES: [&str; 6] = ["x", "y", "z", "yaw", "pitch", "roll"];

/// Parses motion text. Strict mode is the exact inverse of
/// [`render_numerical`]; lenient mode additionally accepts six labeled
/// numbers in any order (the shape planner replies actually take).
pub fn parse_numerical(text: &str, mode: ParseMode) -> Result<CameraMotion, InstructionError> {
    let trimmed = text.trim();
    if let Some(caps) = strict_re().captures(trimmed) {
        let get = |i: usize| caps[i].parse::<f64>().expect("regex-validated number");
        return finish_parse(CameraMotion::new(
            get(1),
            get(2),
            get(3),
            get(4),
            get(5),
            get(6),
        ));
    }
    if mode == ParseMode::Strict {
        return Err(InstructionError::Malformed);
    }
    let mut values = [None::<f64>; 6];
    for (slot, re) in lenient_res() {
        if let Some(caps) = re.captures(trimmed) {
            values[*slot] = caps[1].parse::<f64>().ok();
        }
    }
    let found = values.iter().filter(|v| v.is_some()).count();
    if found == 0 {
        return Err(InstructionError::Malformed);
    }
    if found < 6 {
        let missing = values
            .iter()
            .zip(DOF_NAMES)
            .filter_map(|(v, name)| v.is_none().then_some(name))
            .collect();
        return Err(InstructionError::MissingField(missing));
    }
    finish_parse(CameraMotion::new(
        values[0].unwrap(),
        values[1].unwrap(),
        values[2].unwrap(),
        values[3].unwrap(),
        values[4].unwrap(),
        values[5].unwrap(),
    ))
}

fn finish_parse(m: CameraMotion) -> Result<CameraMotion, InstructionError> {
    if !m.is_finite() {
        return Err(InstructionError::OutOfRange("non-finite value".into()));
    }
    for (name, v) in [("x", m.dx), ("y", m.dy), ("z", m.dz)] {
        if v.abs() > MAX_TRANSLATION_METERS {
            return Err(InstructionError::OutOfRange(format!("{name}={v} m")));
        }
    }
    Ok(m.normalize().expect("finite checked above"))
}

/// The closed directive vocabulary: name → canonical motion, in a stable
/// enumeration order.
#[derive(Debug, Clone)]
pub struct DirectiveTable {
    entries: Vec<(String, CameraMotion)>,
}

impl DirectiveTable {
    pub fn new(entries: Vec<(String, CameraMotion)>) -> Self {
        Self { entries }
    }

    /// The default vocabulary. `zoom_in`/`zoom_out` are aliases of
    /// `move_forward`/`move_backward`; the `side_view_*` entries are compound
    /// orbit motions (strafe one way, yaw back toward the subject).
    pub fn default_table() -> Self {
        let m = |dx: f64, dy: f64, dz: f64, yaw: f64, pitch: f64, roll: f64| {
            CameraMotion::new(dx, dy, dz, yaw, pitch, roll)
        };
        Self::new(vec![
            ("move_left".into(), m(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
            ("move_right".into(), m(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
            ("move_up".into(), m(0.0, 1.0, 0.0, 0.0, 0.0, 0.0)),
            ("move_down".into(), m(0.0, -1.0, 0.0, 0.0, 0.0, 0.0)),
            ("move_forward".into(), m(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)),
            ("move_backward".into(), m(0.0, 0.0, -1.0, 0.0, 0.0, 0.0)),
            ("pan_left".into(), m(0.0, 0.0, 0.0, -30.0, 0.0, 0.0)),
            ("pan_right".into(), m(0.0, 0.0, 0.0, 30.0, 0.0, 0.0)),
            ("tilt_up".into(), m(0.0, 0.0, 0.0, 0.0, 20.0, 0.0)),
            ("tilt_down".into(), m(0.0, 0.0, 0.0, 0.0, -20.0, 0.0)),
            ("zoom_in".into(), m(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)),
            ("zoom_out".into(), m(0.0, 0.0, -1.0, 0.0, 0.0, 0.0)),
            ("side_view_left".into(), m(-0.5, 0.0, 0.0, 45.0, 0.0, 0.0)),
            ("side_view_right".into(), m(0.5, 0.0, 0.0, -45.0, 0.0, 0.0)),
        ])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn motion(&self, name: &str) -> Option<&CameraMotion> {
        let key = normalize_directive_name(name);
        self.entries.iter().find(|(n, _)| *n == key).map(|(_, m)| m)
    }
}

impl Default for DirectiveTable {
    fn default() -> Self {
        Self::default_table()
    }
}

fn normalize_directive_name(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .replace([' ', '-'], "_")
}

/// Resolves a directive to its canonical motion, scaled linearly by the
/// magnitude override when present.
pub fn discrete_to_motion(
    d: &DiscreteDirective,
    table: &DirectiveTable,
) -> Result<CameraMotion, InstructionError> {
    let base = table
        .motion(&d.name)
        .ok_or_else(|| InstructionError::UnknownDirective(d.name.clone()))?;
    let s = d.magnitude_override.unwrap_or(1.0);
    Ok(CameraMotion {
        dx: base.dx * s,
        dy: base.dy * s,
        dz: base.dz * s,
        yaw: base.yaw * s,
        pitch: base.pitch * s,
        roll: base.roll * s,
    })
}

/// Deterministic planner prompt for a question under a given instruction
/// format, using the default directive vocabulary.
pub fn planner_prompt(question: &str, format: InstructionFormat) -> String {
    planner_prompt_with_table(question, format, &DirectiveTable::default_table())
}

pub fn planner_prompt_with_table(
    question: &str,
    format: InstructionFormat,
    table: &DirectiveTable,
) -> String {
    let mut out = String::new();
    out.push_str(
        "You are given an image and a spatial question about it. Propose one camera motion, \
         relative to the current viewpoint, that would reveal the most useful additional \
         evidence for answering the question.\n\nQuestion: ",
    );
    out.push_str(question);
    out.push_str("\n\n");
    match format {
        InstructionFormat::Numerical => {
            out.push_str(
                "Reply with exactly one line giving all six degrees of freedom, translations \
                 in meters and rotations in degrees, in this form:\n",
            );
            out.push_str(
                "move x:+0.00m y:+0.00m z:+0.00m, rotate yaw:+0.0deg pitch:+0.0deg roll:+0.0deg\n",
            );
            out.push_str(
                "Conventions: x right, y up, z forward; positive yaw turns right, positive \
                 pitch tilts up, positive roll is clockwise. Give a value for every one of \
                 x, y, z, yaw, pitch, roll.",
            );
        }
        InstructionFormat::Discrete => {
            out.push_str("Reply with exactly one directive name from this vocabulary:\n");
            for name in table.names() {
                out.push_str("- ");
                out.push_str(name);
                out.push('\n');
            }
            out.push_str("Optionally append a magnitude multiplier as x<value>.");
        }
        InstructionFormat::Natural => {
            out.push_str(
                "Reply with one short sentence describing only the camera motion (direction, \
                 distance, turn). Do not mention any objects, scene content, or what you hope \
                 to see; describe the motion alone.",
            );
        }
    }
    out
}
