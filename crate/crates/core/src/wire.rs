//! Line-oriented frame codec and replay files.
//!
//! Every frame is one UTF-8 line:
//!
//! ```text
//! v=1,t=<int>,h=<L|R>,s=<0|1>,x0,y0,z0,...,x20,y20,z20
//! ```
//!
//! Coordinates use the shortest decimal form that parses back to the same
//! `f64`, so a round trip through the codec is bit-exact. Replay files are
//! the same records preceded by an optional header line:
//!
//! ```text
//! #gestop-replay v=1 label=<name|-> fps=<int|->
//! ```

use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::model::{FrameError, Handedness, KeypointFrame, NUM_COORDS};

pub const SCHEMA_VERSION: u32 = 1;
pub const HEADER_TAG: &str = "#gestop-replay";
const PREFIX_FIELDS: usize = 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed record{}: {reason}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    MalformedRecord { line: Option<usize>, reason: String },
    #[error("unsupported schema version {0}")]
    UnsupportedSchemaVersion(u32),
    #[error("invalid frame{}: {source}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Frame {
        line: Option<usize>,
        #[source]
        source: FrameError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireError {
    fn malformed(reason: impl Into<String>) -> Self {
        WireError::MalformedRecord {
            line: None,
            reason: reason.into(),
        }
    }

    fn at_line(self, n: usize) -> Self {
        match self {
            WireError::MalformedRecord { reason, .. } => WireError::MalformedRecord {
                line: Some(n),
                reason,
            },
            WireError::Frame { source, .. } => WireError::Frame {
                line: Some(n),
                source,
            },
            other => other,
        }
    }
}

/// Encodes a frame as one newline-terminated record.
pub fn encode_frame(frame: &KeypointFrame) -> String {
    let mut out = String::with_capacity(64 + NUM_COORDS * 20);
    let _ = write!(
        out,
        "v={},t={},h={},s={}",
        SCHEMA_VERSION,
        frame.timestamp_ms,
        frame.handedness.as_char(),
        u8::from(frame.signal)
    );
    for c in frame.coords() {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    out
}

/// Decodes one record (trailing newline optional) into a validated frame.
pub fn decode_frame(line: &str) -> Result<KeypointFrame, WireError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut fields = line.split(',');

    let version = fields
        .next()
        .and_then(|f| f.strip_prefix("v="))
        .ok_or_else(|| WireError::malformed("missing schema version"))?;
    let version: u32 = version
        .parse()
        .map_err(|_| WireError::malformed(format!("bad schema version '{version}'")))?;
    if version != SCHEMA_VERSION {
        return Err(WireError::UnsupportedSchemaVersion(version));
    }

    let mut tagged = |tag: &str| -> Result<&str, WireError> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(tag))
            .ok_or_else(|| WireError::malformed(format!("missing field '{tag}'")))
    };
    let t = tagged("t=")?;
    // Wide enough for the whole u64 range and for negative values, which
    // get their own error.
    let timestamp: i128 = t
        .parse()
        .map_err(|_| WireError::malformed(format!("bad timestamp '{t}'")))?;
    let handedness = match tagged("h=")? {
        "L" => Handedness::Left,
        "R" => Handedness::Right,
        other => return Err(WireError::malformed(format!("bad handedness '{other}'"))),
    };
    let signal = match tagged("s=")? {
        "0" => false,
        "1" => true,
        other => return Err(WireError::malformed(format!("bad signal '{other}'"))),
    };

    let mut coords = [0.0f64; NUM_COORDS];
    let mut count = 0;
    for field in fields {
        if count == NUM_COORDS {
            return Err(WireError::malformed(format!(
                "expected {} fields, got more",
                PREFIX_FIELDS + NUM_COORDS
            )));
        }
        coords[count] = field
            .trim()
            .parse()
            .map_err(|_| WireError::malformed(format!("unparseable coordinate '{field}'")))?;
        count += 1;
    }
    if count != NUM_COORDS {
        return Err(WireError::malformed(format!(
            "expected {NUM_COORDS} coordinates, got {count}"
        )));
    }
    if timestamp < 0 {
        return Err(WireError::Frame {
            line: None,
            source: FrameError::NegativeTimestamp(timestamp.max(i64::MIN as i128) as i64),
        });
    }
    let timestamp = u64::try_from(timestamp)
        .map_err(|_| WireError::malformed(format!("timestamp '{t}' out of range")))?;
    KeypointFrame::from_coords(&coords, handedness, timestamp, signal)
        .map_err(|source| WireError::Frame { line: None, source })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayHeader {
    pub label: Option<String>,
    pub fps: Option<u32>,
}

impl ReplayHeader {
    pub fn to_line(&self) -> String {
        let label = self
            .label
            .as_deref()
            .map(escape_label)
            .unwrap_or_else(|| "-".to_string());
        let fps = self
            .fps
            .map(|f| f.to_string())
            .unwrap_or_else(|| "-".to_string());
        format!("{HEADER_TAG} v={SCHEMA_VERSION} label={label} fps={fps}\n")
    }

    pub fn parse(line: &str) -> Result<Self, WireError> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(HEADER_TAG) {
            return Err(WireError::malformed("not a replay header"));
        }
        let mut header = ReplayHeader::default();
        let mut version = None;
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| WireError::malformed(format!("bad header field '{part}'")))?;
            match key {
                "v" => {
                    version = Some(value.parse::<u32>().map_err(|_| {
                        WireError::malformed(format!("bad header version '{value}'"))
                    })?)
                }
                "label" if value != "-" => header.label = Some(unescape_label(value)?),
                "fps" if value != "-" => {
                    header.fps = Some(
                        value
                            .parse()
                            .map_err(|_| WireError::malformed(format!("bad fps '{value}'")))?,
                    )
                }
                "label" | "fps" => {}
                other => {
                    return Err(WireError::malformed(format!(
                        "unknown header field '{other}'"
                    )))
                }
            }
        }
        match version {
            Some(SCHEMA_VERSION) => Ok(header),
            Some(v) => Err(WireError::UnsupportedSchemaVersion(v)),
            None => Err(WireError::malformed("header without version")),
        }
    }
}

/// Labels may contain spaces ("Swipe +"); `%` and whitespace are percent-escaped.
fn escape_label(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '%' => out.push_str("%25"),
            ' ' => out.push_str("%20"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_label(s: &str) -> Result<String, WireError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '%' {
            let hex: String = chars.by_ref().take(2).collect();
            let byte = u8::from_str_radix(&hex, 16)
                .map_err(|_| WireError::malformed(format!("bad escape '%{hex}' in label")))?;
            out.push(byte as char);
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

/// A captured or generated frame stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayFile {
    pub header: ReplayHeader,
    pub frames: Vec<KeypointFrame>,
}

impl ReplayFile {
    pub fn new(header: ReplayHeader, frames: Vec<KeypointFrame>) -> Self {
        Self { header, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Parses file contents; errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self, WireError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, WireError> {
        let mut file = ReplayFile::default();
        let mut last_ts = None;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if n != 1 {
                    return Err(WireError::malformed("header must be the first line").at_line(n));
                }
                file.header = ReplayHeader::parse(&line).map_err(|e| e.at_line(n))?;
                continue;
            }
            let frame = decode_frame(&line).map_err(|e| e.at_line(n))?;
            if let Some(prev) = last_ts {
                if frame.timestamp_ms < prev {
                    return Err(WireError::malformed(format!(
                        "timestamp {} decreases (previous {prev})",
                        frame.timestamp_ms
                    ))
                    .at_line(n));
                }
            }
            last_ts = Some(frame.timestamp_ms);
            file.frames.push(frame);
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, WireError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.header.to_line().as_bytes())?;
        for f in &self.frames {
            w.write_all(encode_frame(f).as_bytes())?;
        }
        w.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("records are ASCII")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))
    }
}

/// Replay pacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    /// No sleeping between frames.
    Max,
    /// Real-time multiplier applied to the timestamp gaps.
    Factor(f64),
}

impl std::str::FromStr for Speed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "max" {
            return Ok(Speed::Max);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Speed::Factor(v)),
            _ => Err(format!(
                "speed must be 'max' or a positive number, got '{s}'"
            )),
        }
    }
}

impl Speed {
    fn gap(&self, prev: u64, next: u64) -> Option<Duration> {
        match *self {
            Speed::Max => None,
            Speed::Factor(f) => {
                let ms = next.saturating_sub(prev) as f64 / f;
                (ms > 0.0).then(|| Duration::from_secs_f64(ms / 1000.0))
            }
        }
    }
}

/// Delivers every frame of `file` in order; returns the number delivered.
pub fn replay<F>(file: &ReplayFile, speed: Speed, mut sink: F) -> usize
where
    F: FnMut(KeypointFrame),
{
    let mut prev = None;
    for frame in &file.frames {
        if let Some(gap) = prev.and_then(|p| speed.gap(p, frame.timestamp_ms)) {
            thread::sleep(gap);
        }
        prev = Some(frame.timestamp_ms);
        sink(*frame);
    }
    file.frames.len()
}

/// Streams a replay file's frames to a writer (typically a TCP producer
/// connection) with the given pacing.
pub fn replay_to_writer<W: Write>(file: &ReplayFile, speed: Speed, w: W) -> io::Result<usize> {
    let mut w = io::BufWriter::new(w);
    let mut result = Ok(());
    let n = replay(file, speed, |f| {
        if result.is_ok() {
            result = w.write_all(encode_frame(&f).as_bytes());
            if result.is_ok() && speed != Speed::Max {
                result = w.flush();
            }
        }
    });
    result?;
    w.flush()?;
    Ok(n)
}

/// Reads newline-delimited records from any reader, decoding each line.
pub fn read_records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = (usize, Result<KeypointFrame, WireError>)> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
            Ok(l) => Some((i + 1, decode_frame(&l).map_err(|e| e.at_line(i + 1)))),
            Err(e) => Some((i + 1, Err(WireError::Io(e)))),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point3, NUM_LANDMARKS};
    use proptest::prelude::*;

    fn sample(t: u64) -> KeypointFrame {
        let mut lm = [Point3::default(); NUM_LANDMARKS];
        for (i, p) in lm.iter_mut().enumerate() {
            *p = Point3::new(0.01 * i as f64, 0.5 - 0.003 * i as f64, -0.02 * i as f64);
        }
        KeypointFrame::new(lm, Handedness::Left, t, t.is_multiple_of(2)).unwrap()
    }

    #[test]
    fn zero_frame_encodes_63_zeros() {
        let f = KeypointFrame::zeroed(Handedness::Right, 0);
        let line = encode_frame(&f);
        assert!(line.ends_with('\n'));
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        assert_eq!(&fields[..4], &["v=1", "t=0", "h=R", "s=0"]);
        assert_eq!(fields.len(), 67);
        assert!(fields[4..].iter().all(|c| *c == "0"));
    }

    #[test]
    fn full_precision_coordinate() {
        let mut lm = [Point3::default(); NUM_LANDMARKS];
        lm[0].x = 0.123456789;
        let f = KeypointFrame::new(lm, Handedness::Right, 5, false).unwrap();
        let back = decode_frame(&encode_frame(&f)).unwrap();
        assert_eq!(back.landmark(0).x, 0.123456789);
        assert_eq!(back, f);
    }

    #[test]
    fn too_few_coordinates() {
        let line = encode_frame(&sample(3));
        let truncated = &line[..line.trim_end().rfind(',').unwrap()];
        assert!(matches!(
            decode_frame(truncated),
            Err(WireError::MalformedRecord { .. })
        ));
        let extra = format!("{},0.5", line.trim_end());
        assert!(matches!(
            decode_frame(&extra),
            Err(WireError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn unsupported_version() {
        let line = encode_frame(&sample(3)).replacen("v=1", "v=99", 1);
        assert!(matches!(
            decode_frame(&line),
            Err(WireError::UnsupportedSchemaVersion(99))
        ));
    }

    #[test]
    fn garbage_fields() {
        for bad in [
            "",
            "hello",
            "v=1,t=x,h=R,s=0",
            "v=1,t=0,h=Q,s=0",
            "v=1,t=0,h=R,s=2",
        ] {
            assert!(
                matches!(decode_frame(bad), Err(WireError::MalformedRecord { .. })),
                "{bad}"
            );
        }
        let nan = encode_frame(&sample(0)).replacen(",0,", ",NaN,", 1);
        assert!(matches!(decode_frame(&nan), Err(WireError::Frame { .. })));
        let neg = encode_frame(&sample(0)).replacen("t=0", "t=-4", 1);
        assert!(matches!(
            decode_frame(&neg),
            Err(WireError::Frame {
                source: FrameError::NegativeTimestamp(-4),
                ..
            })
        ));
    }

    #[test]
    fn replay_file_round_trip_and_max_speed() {
        let file = ReplayFile::new(
            ReplayHeader {
                label: Some("Swipe +".into()),
                fps: Some(30),
            },
            (0..50).map(|i| sample(i * 33)).collect(),
        );
        let text = file.to_text();
        assert!(text.starts_with("#gestop-replay v=1 label=Swipe%20+ fps=30\n"));
        let parsed = ReplayFile::parse(&text).unwrap();
        assert_eq!(parsed, file);

        let mut got = Vec::new();
        let n = replay(&parsed, Speed::Max, |f| got.push(f));
        assert_eq!(n, 50);
        let delivered: String = got.iter().map(encode_frame).collect();
        let original: String = file.frames.iter().map(encode_frame).collect();
        assert_eq!(delivered, original);
    }

    #[test]
    fn empty_replay() {
        let f = ReplayFile::parse("").unwrap();
        assert_eq!(replay(&f, Speed::Max, |_| panic!("no frames")), 0);
        let f = ReplayFile::parse("#gestop-replay v=1 label=- fps=-\n").unwrap();
        assert!(f.is_empty());
        assert_eq!(f.header, ReplayHeader::default());
    }

    #[test]
    fn decreasing_timestamps_report_line() {
        let mut text = ReplayHeader::default().to_line();
        text.push_str(&encode_frame(&sample(10)));
        text.push_str(&encode_frame(&sample(20)));
        text.push_str(&encode_frame(&sample(15)));
        match ReplayFile::parse(&text) {
            Err(WireError::MalformedRecord { line, .. }) => assert_eq!(line, Some(4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paced_replay_sleeps() {
        let file = ReplayFile::new(ReplayHeader::default(), vec![sample(0), sample(40)]);
        let start = std::time::Instant::now();
        replay(&file, Speed::Factor(2.0), |_| {});
        assert!(start.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn speed_parsing() {
        assert_eq!("max".parse::<Speed>(), Ok(Speed::Max));
        assert_eq!("2.5".parse::<Speed>(), Ok(Speed::Factor(2.5)));
        assert!("0".parse::<Speed>().is_err());
        assert!("fast".parse::<Speed>().is_err());
    }

    fn arb_frame() -> impl Strategy<Value = KeypointFrame> {
        (
            proptest::collection::vec(-1e6f64..1e6, NUM_COORDS),
            any::<bool>(),
            any::<bool>(),
            0u64..u64::MAX / 2,
        )
            .prop_map(|(c, left, sig, t)| {
                let h = if left {
                    Handedness::Left
                } else {
                    Handedness::Right
                };
                KeypointFrame::from_coords(&c, h, t, sig).unwrap()
            })
    }

    proptest! {
        #[test]
        fn codec_round_trip(f in arb_frame()) {
            let line = encode_frame(&f);
            let back = decode_frame(&line).unwrap();
            prop_assert_eq!(back, f);
            prop_assert_eq!(encode_frame(&back), line);
        }

        #[test]
        fn label_escape_round_trip(s in "[ -~]{0,20}") {
            prop_assert_eq!(unescape_label(&escape_label(&s)).unwrap(), s);
        }
    }
}
