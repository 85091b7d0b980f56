//! Seeded synthetic frame generators: canonical static poses, clutter poses
//! for the `none` class, and palm-trajectory templates for dynamic gestures.
//!
//! Everything here is a pure function of its arguments and seed.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{Handedness, KeypointFrame, Point3, NONE_LABEL, NUM_LANDMARKS};
use crate::wire::{ReplayFile, ReplayHeader};

/// Frame spacing of generated streams (~30 fps).
pub const FRAME_INTERVAL_MS: u64 = 33;
pub const SYNTH_FPS: u32 = 30;

/// Name of the clutter generator; its frames are labelled `none`.
pub const CLUTTER_POSE: &str = "random_clutter";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown pose '{0}'")]
    UnknownPose(String),
    #[error("unknown trajectory template '{0}'")]
    UnknownTemplate(String),
    #[error("noise sigma must be finite and >= 0, got {0}")]
    BadNoise(f64),
}

type Table = [[f64; 3]; NUM_LANDMARKS];

/// open_palm: all five digits extended, palm facing the camera.
pub const OPEN_PALM: Table = [
    [0.500000, 0.750000, 0.000000],
    [0.450000, 0.710000, 0.000000],
    [0.414645, 0.674645, 0.000000],
    [0.386360, 0.646360, 0.000000],
    [0.361612, 0.621612, 0.000000],
    [0.455000, 0.590000, 0.000000],
    [0.444616, 0.520774, 0.000000],
    [0.437941, 0.476272, 0.000000],
    [0.432749, 0.441660, 0.000000],
    [0.495000, 0.580000, 0.000000],
    [0.495000, 0.505000, 0.000000],
    [0.495000, 0.455000, 0.000000],
    [0.495000, 0.420000, 0.000000],
    [0.535000, 0.590000, 0.000000],
    [0.543340, 0.520499, 0.000000],
    [0.548702, 0.475819, 0.000000],
    [0.552633, 0.443054, 0.000000],
    [0.570000, 0.615000, 0.000000],
    [0.583339, 0.561642, 0.000000],
    [0.591828, 0.527687, 0.000000],
    [0.599104, 0.498583, 0.000000],
];

/// fist: every digit fully curled.
pub const FIST: Table = [
    [0.500000, 0.750000, 0.000000],
    [0.450000, 0.710000, 0.000000],
    [0.462941, 0.707478, -0.025981],
    [0.499193, 0.730307, -0.048533],
    [0.533000, 0.757865, -0.059033],
    [0.455000, 0.590000, 0.000000],
    [0.453197, 0.577979, -0.068937],
    [0.459872, 0.622481, -0.068937],
    [0.461648, 0.634320, -0.036047],
    [0.495000, 0.580000, 0.000000],
    [0.495000, 0.566976, -0.073861],
    [0.495000, 0.616976, -0.073861],
    [0.495000, 0.628947, -0.040971],
    [0.535000, 0.590000, 0.000000],
    [0.536448, 0.577931, -0.068937],
    [0.531087, 0.622611, -0.068937],
    [0.529742, 0.633817, -0.037927],
    [0.570000, 0.615000, 0.000000],
    [0.572316, 0.605735, -0.054164],
    [0.563828, 0.639689, -0.054164],
    [0.561339, 0.649644, -0.025974],
];

/// point: index extended, the rest curled.
pub const POINT: Table = [
    [0.500000, 0.750000, 0.000000],
    [0.450000, 0.710000, 0.000000],
    [0.462941, 0.707478, -0.025981],
    [0.499193, 0.730307, -0.048533],
    [0.533000, 0.757865, -0.059033],
    [0.455000, 0.590000, 0.000000],
    [0.444616, 0.520774, 0.000000],
    [0.437941, 0.476272, 0.000000],
    [0.432749, 0.441660, 0.000000],
    [0.495000, 0.580000, 0.000000],
    [0.495000, 0.566976, -0.073861],
    [0.495000, 0.616976, -0.073861],
    [0.495000, 0.628947, -0.040971],
    [0.535000, 0.590000, 0.000000],
    [0.536448, 0.577931, -0.068937],
    [0.531087, 0.622611, -0.068937],
    [0.529742, 0.633817, -0.037927],
    [0.570000, 0.615000, 0.000000],
    [0.572316, 0.605735, -0.054164],
    [0.563828, 0.639689, -0.054164],
    [0.561339, 0.649644, -0.025974],
];

/// peace: index and middle extended, the rest curled.
pub const PEACE: Table = [
    [0.500000, 0.750000, 0.000000],
    [0.450000, 0.710000, 0.000000],
    [0.462941, 0.707478, -0.025981],
    [0.499193, 0.730307, -0.048533],
    [0.533000, 0.757865, -0.059033],
    [0.455000, 0.590000, 0.000000],
    [0.444616, 0.520774, 0.000000],
    [0.437941, 0.476272, 0.000000],
    [0.432749, 0.441660, 0.000000],
    [0.495000, 0.580000, 0.000000],
    [0.495000, 0.505000, 0.000000],
    [0.495000, 0.455000, 0.000000],
    [0.495000, 0.420000, 0.000000],
    [0.535000, 0.590000, 0.000000],
    [0.536448, 0.577931, -0.068937],
    [0.531087, 0.622611, -0.068937],
    [0.529742, 0.633817, -0.037927],
    [0.570000, 0.615000, 0.000000],
    [0.572316, 0.605735, -0.054164],
    [0.563828, 0.639689, -0.054164],
    [0.561339, 0.649644, -0.025974],
];

/// spiderman: thumb, index and pinky extended; middle and ring curled.
pub const SPIDERMAN: Table = [
    [0.500000, 0.750000, 0.000000],
    [0.450000, 0.710000, 0.000000],
    [0.414645, 0.674645, 0.000000],
    [0.386360, 0.646360, 0.000000],
    [0.361612, 0.621612, 0.000000],
    [0.455000, 0.590000, 0.000000],
    [0.444616, 0.520774, 0.000000],
    [0.437941, 0.476272, 0.000000],
    [0.432749, 0.441660, 0.000000],
    [0.495000, 0.580000, 0.000000],
    [0.495000, 0.566976, -0.073861],
    [0.495000, 0.616976, -0.073861],
    [0.495000, 0.628947, -0.040971],
    [0.535000, 0.590000, 0.000000],
    [0.536448, 0.577931, -0.068937],
    [0.531087, 0.622611, -0.068937],
    [0.529742, 0.633817, -0.037927],
    [0.570000, 0.615000, 0.000000],
    [0.583339, 0.561642, 0.000000],
    [0.591828, 0.527687, 0.000000],
    [0.599104, 0.498583, 0.000000],
];

/// The canonical static poses, in label order.
pub const POSES: [(&str, &Table); 5] = [
    ("open_palm", &OPEN_PALM),
    ("fist", &FIST),
    ("point", &POINT),
    ("peace", &PEACE),
    ("spiderman", &SPIDERMAN),
];

pub fn pose_names() -> Vec<&'static str> {
    POSES.iter().map(|(n, _)| *n).collect()
}

pub fn pose_table(name: &str) -> Option<&'static Table> {
    POSES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Dynamic trajectory templates.
pub const TEMPLATES: [&str; 5] = [
    "swipe_up",
    "swipe_down",
    "swipe_left",
    "swipe_right",
    "circle",
];

// Hand model used for the clutter generator (and from which the canonical
// tables above were produced with binary curls).
const WRIST: [f64; 2] = [0.5, 0.75];
const DIGIT_BASE: [[f64; 2]; 5] = [
    [-0.05, -0.04],
    [-0.045, -0.16],
    [-0.005, -0.17],
    [0.035, -0.16],
    [0.07, -0.135],
];
const DIGIT_DIR: [[f64; 2]; 5] = [
    [-FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
    [-0.15, -1.0],
    [0.0, -1.0],
    [0.12, -1.0],
    [0.25, -1.0],
];
const SEGMENTS: [[f64; 3]; 5] = [
    [0.05, 0.04, 0.035],
    [0.07, 0.045, 0.035],
    [0.075, 0.05, 0.035],
    [0.07, 0.045, 0.033],
    [0.055, 0.035, 0.03],
];
const FLEX_DEG: [f64; 3] = [80.0, 100.0, 70.0];
const THUMB_FLEX_DEG: [f64; 3] = [60.0, 50.0, 40.0];

/// Builds a right-hand pose from per-digit curl amounts in `[0, 1]`
/// (thumb, index, middle, ring, pinky). Fingers fold toward the camera
/// (negative z); the thumb folds across the palm.
pub fn articulate(curls: [f64; 5]) -> Table {
    let mut out = [[0.0; 3]; NUM_LANDMARKS];
    out[0] = [WRIST[0], WRIST[1], 0.0];
    for digit in 0..5 {
        let base = 1 + 4 * digit;
        let mut p = [
            WRIST[0] + DIGIT_BASE[digit][0],
            WRIST[1] + DIGIT_BASE[digit][1],
            0.0,
        ];
        out[base] = p;
        let [dx, dy] = unit(DIGIT_DIR[digit]);
        let mut angle = 0.0f64;
        for seg in 0..3 {
            let flex = if digit == 0 {
                THUMB_FLEX_DEG[seg]
            } else {
                FLEX_DEG[seg]
            };
            angle += curls[digit] * flex.to_radians();
            let len = SEGMENTS[digit][seg];
            let (c, s) = (angle.cos(), angle.sin());
            let step = if digit == 0 {
                // Fold toward the palm centre (+x) and the camera.
                [
                    len * (c * dx + s * FRAC_1_SQRT_2),
                    len * (c * dy + s * 0.35),
                    -len * s * 0.6,
                ]
            } else {
                [len * c * dx, len * c * dy, -len * s]
            };
            p = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            out[base + 1 + seg] = p;
        }
    }
    out
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

fn check_sigma(sigma: f64) -> Result<Normal<f64>, SynthError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SynthError::BadNoise(sigma));
    }
    Normal::new(0.0, sigma).map_err(|_| SynthError::BadNoise(sigma))
}

fn noisy_frame(
    table: &Table,
    offset: [f64; 2],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    t: u64,
    signal: bool,
) -> KeypointFrame {
    let mut lm = [Point3::default(); NUM_LANDMARKS];
    for (p, row) in lm.iter_mut().zip(table.iter()) {
        *p = Point3::new(
            row[0] + offset[0] + noise.sample(rng),
            row[1] + offset[1] + noise.sample(rng),
            row[2] + noise.sample(rng),
        );
    }
    KeypointFrame::new(lm, Handedness::Right, t, signal).expect("generated coordinates are finite")
}

/// A random non-canonical hand: continuous curls, jittered rotation,
/// scale and position.
fn clutter_table(rng: &mut ChaCha8Rng) -> Table {
    let curls = [
        rng.gen::<f64>(),
        rng.gen::<f64>(),
        rng.gen::<f64>(),
        rng.gen::<f64>(),
        rng.gen::<f64>(),
    ];
    let mut table = articulate(curls);
    let theta = rng.gen_range(-0.5..0.5);
    let scale = rng.gen_range(0.8..1.2);
    let shift = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let (c, s) = (f64::cos(theta), f64::sin(theta));
    let [wx, wy] = WRIST;
    for row in table.iter_mut() {
        let (dx, dy) = (row[0] - wx, row[1] - wy);
        row[0] = wx + shift[0] + scale * (c * dx - s * dy);
        row[1] = wy + shift[1] + scale * (s * dx + c * dy);
        row[2] *= scale;
    }
    table
}

/// `n` frames of a named pose with per-coordinate Gaussian noise.
///
/// `random_clutter` (alias `none`) draws a fresh random hand per frame and
/// labels the file `none`.
pub fn synth_static(
    pose: &str,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ReplayFile, SynthError> {
    let noise = check_sigma(noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (label, frames) = if pose == CLUTTER_POSE || pose == NONE_LABEL {
        let frames = (0..n)
            .map(|i| {
                let table = clutter_table(&mut rng);
                noisy_frame(
                    &table,
                    [0.0, 0.0],
                    &noise,
                    &mut rng,
                    i as u64 * FRAME_INTERVAL_MS,
                    false,
                )
            })
            .collect();
        (NONE_LABEL, frames)
    } else {
        let table = pose_table(pose).ok_or_else(|| SynthError::UnknownPose(pose.to_string()))?;
        let frames = (0..n)
            .map(|i| {
                noisy_frame(
                    table,
                    [0.0, 0.0],
                    &noise,
                    &mut rng,
                    i as u64 * FRAME_INTERVAL_MS,
                    false,
                )
            })
            .collect();
        (pose, frames)
    };
    Ok(ReplayFile::new(
        ReplayHeader {
            label: Some(label.to_string()),
            fps: Some(SYNTH_FPS),
        },
        frames,
    ))
}

/// Palm offset relative to the resting wrist position at progress `u` in
/// `[0, 1]`.
fn template_offset(template: &str, u: f64) -> Option<[f64; 2]> {
    const AMP: f64 = 0.2;
    const RADIUS: f64 = 0.15;
    let lin = -AMP + 2.0 * AMP * u;
    Some(match template {
        "swipe_right" => [lin, 0.0],
        "swipe_left" => [-lin, 0.0],
        "swipe_up" => [0.0, -lin],
        "swipe_down" => [0.0, lin],
        "circle" => {
            let a = 2.0 * PI * u;
            [RADIUS * a.cos() - RADIUS, -RADIUS * a.sin()]
        }
        _ => return None,
    })
}

/// An open-palm hand moving along a named trajectory; every frame carries
/// the signal flag.
pub fn synth_dynamic(
    template: &str,
    frames: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ReplayFile, SynthError> {
    synth_dynamic_at(template, frames, noise_sigma, seed, [0.0, 0.0])
}

/// [`synth_dynamic`] with the whole trajectory shifted by `origin`.
pub fn synth_dynamic_at(
    template: &str,
    frames: usize,
    noise_sigma: f64,
    seed: u64,
    origin: [f64; 2],
) -> Result<ReplayFile, SynthError> {
    let noise = check_sigma(noise_sigma)?;
    template_offset(template, 0.0)
        .ok_or_else(|| SynthError::UnknownTemplate(template.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..frames)
        .map(|i| {
            let u = if frames > 1 {
                i as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let [ox, oy] = template_offset(template, u).expect("template checked");
            noisy_frame(
                &OPEN_PALM,
                [ox + origin[0], oy + origin[1]],
                &noise,
                &mut rng,
                i as u64 * FRAME_INTERVAL_MS,
                true,
            )
        })
        .collect();
    Ok(ReplayFile::new(
        ReplayHeader {
            label: Some(template.to_string()),
            fps: Some(SYNTH_FPS),
        },
        out,
    ))
}

/// Labelled frames for every canonical pose plus clutter, `per_class` each.
pub fn static_dataset(
    per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<(KeypointFrame, String)>, SynthError> {
    let mut out = Vec::with_capacity(per_class * (POSES.len() + 1));
    let names = std::iter::once(CLUTTER_POSE).chain(POSES.iter().map(|(n, _)| *n));
    for (i, name) in names.enumerate() {
        let file = synth_static(
            name,
            per_class,
            noise_sigma,
            seed.wrapping_add(i as u64 * 7919),
        )?;
        let label = file
            .header
            .label
            .clone()
            .expect("synthetic files are labelled");
        out.extend(file.frames.into_iter().map(|f| (f, label.clone())));
    }
    Ok(out)
}

/// Labelled sequences for every template, with random lengths in
/// `len_range` and random trajectory origins.
pub fn dynamic_dataset(
    per_class: usize,
    len_range: std::ops::RangeInclusive<usize>,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<(Vec<KeypointFrame>, String)>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * TEMPLATES.len());
    for template in TEMPLATES {
        for _ in 0..per_class {
            let len = rng.gen_range(len_range.clone());
            let origin = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let file = synth_dynamic_at(template, len, noise_sigma, rng.gen(), origin)?;
            out.push((file.frames, template.to_string()));
        }
    }
    Ok(out)
}
