//! Event data model, stream validation, and event-frame binning.
//!
//! An [`EventStream`] is the raw output of an event sensor: `(x, y, t, p)`
//! records on an `M x N` pixel array over a duration `T`. Frames are binary
//! planes marking every pixel that fired at least once inside a time window.

use std::io::{Read, Write};

use thiserror::Error;

use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("timestamp decreases at event {index}: {prev} > {next}")]
    NonMonotoneTimestamp { index: usize, prev: f64, next: f64 },
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBoundsCoordinate {
        index: usize,
        x: u16,
        y: u16,
        width: u32,
        height: u32,
    },
    #[error("event {index} has polarity {p}, expected +1 or -1")]
    InvalidPolarity { index: usize, p: i8 },
    #[error("event {index} timestamp {t} outside [0, {duration}]")]
    TimestampOutOfRange { index: usize, t: f64, duration: f64 },
    #[error("binning window must be positive and finite, got {0}")]
    ZeroWindow(f64),
    #[error("frame {height}x{width} is not divisible by factor {factor}")]
    NonDivisibleDimensions {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("invalid stream geometry: {0}")]
    InvalidGeometry(String),
    #[error("malformed event file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` wrapper so [`EventError`] stays comparable in tests.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct IoError(#[from] pub std::io::Error);

impl PartialEq for IoError {
    fn eq(&self, other: &Self) -> bool {
        self.0.kind() == other.0.kind()
    }
}

impl From<std::io::Error> for EventError {
    fn from(e: std::io::Error) -> Self {
        EventError::Io(IoError(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// A validated, time-ordered event sequence. Construct with [`validate_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: u32,
    height: u32,
    duration: f64,
    events: Vec<Event>,
}

impl EventStream {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// Checks every stream invariant and wraps the events, preserving input order.
pub fn validate_stream(
    raw: Vec<Event>,
    width: u32,
    height: u32,
    duration: f64,
) -> Result<EventStream, EventError> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(EventError::InvalidGeometry(format!(
            "duration must be finite and non-negative, got {duration}"
        )));
    }
    let mut prev = f64::NEG_INFINITY;
    for (index, e) in raw.iter().enumerate() {
        if e.p != 1 && e.p != -1 {
            return Err(EventError::InvalidPolarity { index, p: e.p });
        }
        if u32::from(e.x) >= width || u32::from(e.y) >= height {
            return Err(EventError::OutOfBoundsCoordinate {
                index,
                x: e.x,
                y: e.y,
                width,
                height,
            });
        }
        // NaN fails this comparison as well.
        if !(e.t >= 0.0 && e.t <= duration) {
            return Err(EventError::TimestampOutOfRange {
                index,
                t: e.t,
                duration,
            });
        }
        if e.t < prev {
            return Err(EventError::NonMonotoneTimestamp {
                index: index - 1,
                prev,
                next: e.t,
            });
        }
        prev = e.t;
    }
    Ok(EventStream {
        width,
        height,
        duration,
        events: raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinningMode {
    /// Fixed windows `[k*dt, (k+1)*dt)`; empty windows still produce frames.
    #[default]
    Uniform,
    /// A window opens at the first event after the previous one closes.
    Anchored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningConfig {
    window: f64,
    mode: BinningMode,
}

impl BinningConfig {
    pub fn new(window: f64, mode: BinningMode) -> Result<Self, EventError> {
        if !(window.is_finite() && window > 0.0) {
            return Err(EventError::ZeroWindow(window));
        }
        Ok(Self { window, mode })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn mode(&self) -> BinningMode {
        self.mode
    }
}

/// `D` binary planes of `H x W`, row-major with `W` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    depth: usize,
    height: usize,
    width: usize,
    window: f64,
    cells: Vec<u8>,
}

impl FrameStack {
    pub fn zeros(depth: usize, height: usize, width: usize, window: f64) -> Self {
        Self {
            depth,
            height,
            width,
            window,
            cells: vec![0; depth * height * width],
        }
    }

    /// Builds a stack from raw cells; any non-zero value is stored as 1.
    pub fn from_cells(
        depth: usize,
        height: usize,
        width: usize,
        window: f64,
        cells: Vec<u8>,
    ) -> Option<Self> {
        if cells.len() != depth * height * width {
            return None;
        }
        let cells = cells.into_iter().map(|c| u8::from(c != 0)).collect();
        Some(Self {
            depth,
            height,
            width,
            window,
            cells,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn frame(&self, k: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.cells[k * plane..(k + 1) * plane]
    }

    pub fn get(&self, k: usize, v: usize, u: usize) -> u8 {
        self.cells[(k * self.height + v) * self.width + u]
    }

    fn set(&mut self, k: usize, v: usize, u: usize) {
        self.cells[(k * self.height + v) * self.width + u] = 1;
    }

    pub fn count_ones(&self, k: usize) -> usize {
        self.frame(k).iter().map(|&c| c as usize).sum()
    }
}

/// Relative slack used when a time ratio lands on an integer boundary.
const BOUNDARY_SLACK: f64 = 1e-9;

/// `floor(q)`, except values within rounding distance of an integer snap to it.
/// Keeps `0.015 / 0.005` in window 3 rather than 2.
fn snapped_floor(q: f64) -> usize {
    let r = q.round();
    if (q - r).abs() <= BOUNDARY_SLACK * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        q.floor().max(0.0) as usize
    }
}

/// Number of uniform windows covering `[0, duration]`.
pub fn uniform_frame_count(duration: f64, window: f64) -> usize {
    let q = duration / window;
    let r = q.round();
    if (q - r).abs() <= BOUNDARY_SLACK * r.abs().max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// Index of the uniform window containing `t`, clamped to the last frame.
pub fn uniform_frame_index(t: f64, window: f64, frames: usize) -> usize {
    snapped_floor(t / window).min(frames.saturating_sub(1))
}

/// Groups event indices into frames according to the binning mode.
/// Returns `(frame count, frame index per event)`.
pub fn assign_frames(stream: &EventStream, cfg: &BinningConfig) -> (usize, Vec<usize>) {
    let dt = cfg.window();
    match cfg.mode() {
        BinningMode::Uniform => {
            let mut frames = uniform_frame_count(stream.duration, dt);
            if frames == 0 && !stream.is_empty() {
                // only possible when T == 0; every event sits at t = 0
                frames = 1;
            }
            let idx = stream
                .events
                .iter()
                .map(|e| uniform_frame_index(e.t, dt, frames))
                .collect();
            (frames, idx)
        }
        BinningMode::Anchored => {
            let mut idx = Vec::with_capacity(stream.len());
            let mut k = 0usize;
            let mut anchor = match stream.events.first() {
                Some(e) => e.t,
                None => return (0, idx),
            };
            for e in &stream.events {
                if snapped_floor((e.t - anchor) / dt) >= 1 {
                    k += 1;
                    anchor = e.t;
                }
                idx.push(k);
            }
            (k + 1, idx)
        }
    }
}

/// Accumulates events into binary frames. Polarity is discarded.
pub fn bin_to_frames(stream: &EventStream, cfg: &BinningConfig) -> FrameStack {
    let (frames, idx) = assign_frames(stream, cfg);
    let mut stack = FrameStack::zeros(
        frames,
        stream.height as usize,
        stream.width as usize,
        cfg.window(),
    );
    for (e, &k) in stream.events.iter().zip(&idx) {
        stack.set(k, e.y as usize, e.x as usize);
    }
    stack
}

/// Binary max-pool (logical OR) over `factor x factor` blocks of every frame.
pub fn downscale_frames(stack: &FrameStack, factor: usize) -> Result<FrameStack, EventError> {
    if factor == 0 || stack.height % factor != 0 || stack.width % factor != 0 {
        return Err(EventError::NonDivisibleDimensions {
            height: stack.height,
            width: stack.width,
            factor,
        });
    }
    if factor == 1 {
        return Ok(stack.clone());
    }
    let (h, w) = (stack.height / factor, stack.width / factor);
    let mut cells = vec![0u8; stack.depth * h * w];
    let src_plane = stack.height * stack.width;
    par::for_each_chunk_mut(&mut cells, (h * w).max(1), |k, out| {
        let src = &stack.cells[k * src_plane..(k + 1) * src_plane];
        for (v, row) in src.chunks_exact(stack.width).enumerate() {
            let out_row = &mut out[(v / factor) * w..(v / factor + 1) * w];
            for (u, &c) in row.iter().enumerate() {
                out_row[u / factor] |= c;
            }
        }
    });
    Ok(FrameStack {
        depth: stack.depth,
        height: h,
        width: w,
        window: stack.window,
        cells,
    })
}

pub const EVT_MAGIC: &[u8; 8] = b"E2VEVT1\0";
const EVT_HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8;
const EVT_RECORD_LEN: usize = 16;

/// Serializes a stream in the little-endian `EVT1` layout.
pub fn write_events<W: Write>(stream: &EventStream, mut out: W) -> Result<(), EventError> {
    let mut buf = Vec::with_capacity(EVT_HEADER_LEN + stream.len() * EVT_RECORD_LEN);
    buf.extend_from_slice(EVT_MAGIC);
    buf.extend_from_slice(&stream.width.to_le_bytes());
    buf.extend_from_slice(&stream.height.to_le_bytes());
    buf.extend_from_slice(&stream.duration.to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.p.to_le_bytes());
        buf.extend_from_slice(&[0u8; 3]);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses an `EVT1` file and validates the decoded stream.
pub fn read_events<R: Read>(mut input: R) -> Result<EventStream, EventError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_events(&bytes)
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream, EventError> {
    if bytes.len() < EVT_HEADER_LEN {
        return Err(EventError::Format("truncated header".into()));
    }
    if &bytes[..8] != EVT_MAGIC {
        return Err(EventError::Format("bad magic".into()));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let duration = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let body = &bytes[EVT_HEADER_LEN..];
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(EVT_RECORD_LEN))
        .ok_or_else(|| EventError::Format(format!("record count {count} overflows")))?;
    if body.len() < expected {
        return Err(EventError::Format(format!(
            "header declares {count} records but only {} bytes follow",
            body.len()
        )));
    }
    if body.len() > expected {
        return Err(EventError::Format(format!(
            "{} trailing bytes after {count} records",
            body.len() - expected
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for rec in body.chunks_exact(EVT_RECORD_LEN) {
        if rec[13..16] != [0, 0, 0] {
            return Err(EventError::Format("non-zero padding".into()));
        }
        events.push(Event {
            t: f64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            p: rec[12] as i8,
        });
    }
    validate_stream(events, width, height, duration)
}

pub const FRAME_MAGIC: &[u8; 8] = b"E2VFRM1\0";

/// Cache format for preprocessed stacks: magic, u32 D/H/W, f64 window, packed bits.
pub fn write_frames<W: Write>(stack: &FrameStack, mut out: W) -> Result<(), EventError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FRAME_MAGIC);
    for d in [stack.depth, stack.height, stack.width] {
        let d = u32::try_from(d).map_err(|_| EventError::Format("dimension overflow".into()))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&stack.window.to_le_bytes());
    buf.extend_from_slice(&pack_bits(&stack.cells));
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_frames<R: Read>(mut input: R) -> Result<FrameStack, EventError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || &bytes[..8] != FRAME_MAGIC {
        return Err(EventError::Format("bad frame cache header".into()));
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (depth, height, width) = (dim(8), dim(12), dim(16));
    let window = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let n = depth * height * width;
    let body = &bytes[28..];
    if body.len() != n.div_ceil(8) {
        return Err(EventError::Format("frame cache length mismatch".into()));
    }
    Ok(FrameStack {
        depth,
        height,
        width,
        window,
        cells: unpack_bits(body, n),
    })
}

pub(crate) fn pack_bits(cells: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; cells.len().div_ceil(8)];
    for (i, &c) in cells.iter().enumerate() {
        if c != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(x: u16, y: u16, t: f64) -> Event {
        Event::new(x, y, t, 1)
    }

    #[test]
    fn empty_stream_is_valid() {
        let s = validate_stream(vec![], 256, 256, 0.5).unwrap();
        assert_eq!(s.len(), 0);
    }

    #[test]
    fn rejects_decreasing_time() {
        let err = validate_stream(vec![ev(0, 0, 0.1), ev(0, 0, 0.05)], 4, 4, 0.5).unwrap_err();
        assert!(matches!(err, EventError::NonMonotoneTimestamp { index: 0, .. }));
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            validate_stream(vec![ev(4, 0, 0.1)], 4, 4, 0.5),
            Err(EventError::OutOfBoundsCoordinate { .. })
        ));
        assert!(matches!(
            validate_stream(vec![Event::new(0, 0, 0.1, 0)], 4, 4, 0.5),
            Err(EventError::InvalidPolarity { p: 0, .. })
        ));
        assert!(matches!(
            validate_stream(vec![ev(0, 0, 0.6)], 4, 4, 0.5),
            Err(EventError::TimestampOutOfRange { .. })
        ));
        assert!(matches!(
            validate_stream(vec![ev(0, 0, -0.1)], 4, 4, 0.5),
            Err(EventError::TimestampOutOfRange { .. })
        ));
        assert!(matches!(
            validate_stream(vec![ev(0, 0, f64::NAN)], 4, 4, 0.5),
            Err(EventError::TimestampOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(BinningConfig::new(0.0, BinningMode::Uniform).is_err());
        assert!(BinningConfig::new(-1.0, BinningMode::Anchored).is_err());
    }

    #[test]
    fn uniform_count_for_half_second() {
        let s = validate_stream(vec![], 8, 8, 0.5).unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Uniform).unwrap();
        assert_eq!(bin_to_frames(&s, &cfg).depth(), 100);
    }

    #[test]
    fn single_event_marks_one_cell() {
        let s = validate_stream(vec![ev(3, 4, 0.001)], 8, 8, 0.5).unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Uniform).unwrap();
        let f = bin_to_frames(&s, &cfg);
        assert_eq!(f.get(0, 4, 3), 1);
        assert_eq!(f.cells().iter().map(|&c| c as usize).sum::<usize>(), 1);
    }

    #[test]
    fn opposite_polarities_collapse_to_one() {
        let s = validate_stream(
            vec![Event::new(1, 1, 0.001, 1), Event::new(1, 1, 0.002, -1)],
            4,
            4,
            0.01,
        )
        .unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Uniform).unwrap();
        let f = bin_to_frames(&s, &cfg);
        assert_eq!(f.get(0, 1, 1), 1);
        assert_eq!(f.count_ones(0), 1);
    }

    #[test]
    fn boundary_event_goes_to_later_frame() {
        let s = validate_stream(vec![ev(0, 0, 0.015)], 2, 2, 0.05).unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Uniform).unwrap();
        let f = bin_to_frames(&s, &cfg);
        assert_eq!(f.count_ones(3), 1);
        assert_eq!(f.count_ones(2), 0);
    }

    #[test]
    fn event_at_duration_lands_in_last_frame() {
        let s = validate_stream(vec![ev(0, 0, 0.5)], 2, 2, 0.5).unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Uniform).unwrap();
        let f = bin_to_frames(&s, &cfg);
        assert_eq!(f.depth(), 100);
        assert_eq!(f.count_ones(99), 1);
    }

    /// Step-through of the anchored window rule, written as an explicit state machine.
    fn anchored_oracle(ts: &[f64], dt: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let (mut k, mut j) = (0usize, 0usize);
        let mut i = 0usize;
        while i < ts.len() {
            if ts[i] - ts[j] < dt - 1e-12 {
                out.push(k);
                i += 1;
            } else {
                k += 1;
                j = i;
            }
        }
        out
    }

    #[test]
    fn anchored_hand_example() {
        let ts = [0.001, 0.004, 0.011, 0.030, 0.031];
        assert_eq!(anchored_oracle(&ts, 0.005), vec![0, 0, 1, 2, 2]);
        let s = validate_stream(
            ts.iter().enumerate().map(|(i, &t)| ev(i as u16, 0, t)).collect(),
            8,
            1,
            0.05,
        )
        .unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Anchored).unwrap();
        let (n, idx) = assign_frames(&s, &cfg);
        assert_eq!(n, 3);
        assert_eq!(idx, vec![0, 0, 1, 2, 2]);
        let f = bin_to_frames(&s, &cfg);
        assert_eq!(f.depth(), 3);
        assert_eq!((f.get(0, 0, 0), f.get(0, 0, 1)), (1, 1));
        assert_eq!(f.get(1, 0, 2), 1);
        assert_eq!((f.get(2, 0, 3), f.get(2, 0, 4)), (1, 1));
    }

    #[test]
    fn anchored_empty_stream_has_no_frames() {
        let s = validate_stream(vec![], 4, 4, 0.5).unwrap();
        let cfg = BinningConfig::new(0.005, BinningMode::Anchored).unwrap();
        assert_eq!(bin_to_frames(&s, &cfg).depth(), 0);
    }

    #[test]
    fn downscale_or_pool() {
        let mut cells = vec![0u8; 4];
        cells[3] = 1;
        let f = FrameStack::from_cells(1, 2, 2, 0.005, cells).unwrap();
        let d = downscale_frames(&f, 2).unwrap();
        assert_eq!(d.cells(), &[1]);

        let z = FrameStack::zeros(1, 512, 512, 0.005);
        let d = downscale_frames(&z, 2).unwrap();
        assert_eq!((d.height(), d.width()), (256, 256));
        assert!(d.cells().iter().all(|&c| c == 0));

        assert!(matches!(
            downscale_frames(&FrameStack::zeros(1, 6, 6, 0.1), 4),
            Err(EventError::NonDivisibleDimensions { .. })
        ));
    }

    fn block_max_oracle(f: &FrameStack, factor: usize) -> Vec<u8> {
        let (h, w) = (f.height() / factor, f.width() / factor);
        let mut out = Vec::new();
        for k in 0..f.depth() {
            for v in 0..h {
                for u in 0..w {
                    let mut m = 0;
                    for dv in 0..factor {
                        for du in 0..factor {
                            m = m.max(f.get(k, v * factor + dv, u * factor + du));
                        }
                    }
                    out.push(m);
                }
            }
        }
        out
    }

    fn arb_stack(max_d: usize) -> impl Strategy<Value = FrameStack> {
        (1..=max_d, 1usize..5, 1usize..5).prop_flat_map(|(d, h4, w4)| {
            let (h, w) = (h4 * 4, w4 * 4);
            proptest::collection::vec(0u8..2, d * h * w)
                .prop_map(move |c| FrameStack::from_cells(d, h, w, 0.01, c).unwrap())
        })
    }

    proptest! {
        #[test]
        fn downscale_matches_block_max(f in arb_stack(3)) {
            let d = downscale_frames(&f, 2).unwrap();
            prop_assert_eq!(d.cells(), &block_max_oracle(&f, 2)[..]);
        }

        #[test]
        fn downscale_composes(f in arb_stack(2)) {
            let twice = downscale_frames(&downscale_frames(&f, 2).unwrap(), 2).unwrap();
            let once = downscale_frames(&f, 4).unwrap();
            prop_assert_eq!(twice, once);
            prop_assert_eq!(downscale_frames(&f, 1).unwrap(), f);
        }

        #[test]
        fn binning_partitions_events(
            mut ts in proptest::collection::vec(0.0f64..0.5, 0..200),
            xy in proptest::collection::vec((0u16..6, 0u16..5), 200),
            anchored in any::<bool>(),
        ) {
            ts.sort_by(f64::total_cmp);
            let events: Vec<Event> = ts.iter().zip(&xy).map(|(&t, &(x, y))| ev(x, y, t)).collect();
            let s = validate_stream(events, 6, 5, 0.5).unwrap();
            let mode = if anchored { BinningMode::Anchored } else { BinningMode::Uniform };
            let cfg = BinningConfig::new(0.005, mode).unwrap();
            let (n, idx) = assign_frames(&s, &cfg);
            prop_assert_eq!(idx.len(), s.len());
            prop_assert!(idx.iter().all(|&k| k < n));
            if !anchored {
                prop_assert_eq!(n, 100);
            }
            let f = bin_to_frames(&s, &cfg);
            for k in 0..n {
                let mut distinct: Vec<(u16, u16)> = s.events().iter().zip(&idx)
                    .filter(|(_, &kk)| kk == k).map(|(e, _)| (e.x, e.y)).collect();
                distinct.sort();
                distinct.dedup();
                prop_assert_eq!(f.count_ones(k), distinct.len());
            }
        }

        #[test]
        fn evt_round_trip(
            mut ts in proptest::collection::vec(0.0f64..1.0, 0..50),
            pol in proptest::collection::vec(any::<bool>(), 50),
        ) {
            ts.sort_by(f64::total_cmp);
            let events = ts.iter().zip(&pol).enumerate()
                .map(|(i, (&t, &p))| Event::new((i % 7) as u16, (i % 3) as u16, t, if p { 1 } else { -1 }))
                .collect();
            let s = validate_stream(events, 7, 3, 1.0).unwrap();
            let mut buf = Vec::new();
            write_events(&s, &mut buf).unwrap();
            prop_assert_eq!(buf.len(), 32 + 16 * s.len());
            prop_assert_eq!(read_events(&buf[..]).unwrap(), s);
        }
    }

    #[test]
    fn anchored_matches_uniform_on_aligned_fixture() {
        let dt = 0.25;
        let mut events = Vec::new();
        for k in 0..4 {
            let start = k as f64 * dt;
            events.push(ev(k as u16, 0, start));
            events.push(ev(0, 1, start + 0.1));
            events.push(ev(1, 1, start + 0.2));
        }
        let s = validate_stream(events, 4, 2, 1.0).unwrap();
        let u = bin_to_frames(&s, &BinningConfig::new(dt, BinningMode::Uniform).unwrap());
        let a = bin_to_frames(&s, &BinningConfig::new(dt, BinningMode::Anchored).unwrap());
        assert_eq!(u, a);
    }

    #[test]
    fn evt_reader_rejects_corruption() {
        let s = validate_stream(vec![ev(1, 1, 0.1)], 4, 4, 0.5).unwrap();
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(decode_events(&bad), Err(EventError::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(decode_events(&long), Err(EventError::Format(_))));
        assert!(matches!(
            decode_events(&buf[..buf.len() - 1]),
            Err(EventError::Format(_))
        ));
    }

    #[test]
    fn frame_cache_round_trip() {
        let cells: Vec<u8> = (0..3 * 5 * 7).map(|i| (i % 3 == 0) as u8).collect();
        let f = FrameStack::from_cells(3, 5, 7, 0.05, cells).unwrap();
        let mut buf = Vec::new();
        write_frames(&f, &mut buf).unwrap();
        assert_eq!(read_frames(&buf[..]).unwrap(), f);
    }
}
