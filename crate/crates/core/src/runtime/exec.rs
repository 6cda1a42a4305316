use std::time::Instant;

use super::plan::{MemoryPlan, OpKind, VALUE_BYTES};
use crate::data::minmax_normalize_inplace;
use crate::error::{Error, Result};
use crate::model::{apply_mask, TinyPpg};
use crate::nn::{
    batchnorm_eval_channel, conv1d_slice, maxpool1d_slice, relu_inplace, sigmoid_inplace, upsample_slice, Real,
};

/// Runs a model window by window inside one preallocated arena laid out by
/// a [`MemoryPlan`]. Nothing is allocated per window.
pub struct ArenaExecutor<'m, T: Real = f32> {
    model: &'m TinyPpg<T>,
    plan: MemoryPlan,
    arena: Vec<T>,
    peak_live_bytes: usize,
    touched_end_bytes: usize,
}

fn span(plan: &MemoryPlan, id: usize) -> (usize, usize) {
    let b = &plan.buffers[id];
    (b.offset / VALUE_BYTES, b.channels * b.len)
}

/// Borrows a read-only source and a writable destination from the arena.
/// The plan guarantees the two never overlap.
fn split<T>(arena: &mut [T], src: (usize, usize), dst: (usize, usize)) -> (&[T], &mut [T]) {
    let (s0, sl) = src;
    let (d0, dl) = dst;
    assert!(s0 + sl <= d0 || d0 + dl <= s0, "arena buffers overlap");
    if s0 < d0 {
        let (lo, hi) = arena.split_at_mut(d0);
        (&lo[s0..s0 + sl], &mut hi[..dl])
    } else {
        let (lo, hi) = arena.split_at_mut(s0);
        (&hi[..sl], &mut lo[d0..d0 + dl])
    }
}

impl<'m, T: Real> ArenaExecutor<'m, T> {
    pub fn new(model: &'m TinyPpg<T>) -> Result<Self> {
        let plan = MemoryPlan::for_model(model)?;
        let arena = vec![T::zero(); plan.arena_total_bytes / VALUE_BYTES];
        Ok(Self { model, plan, arena, peak_live_bytes: 0, touched_end_bytes: 0 })
    }

    pub fn plan(&self) -> &MemoryPlan {
        &self.plan
    }

    /// Largest live-buffer total seen while running, in bytes.
    pub fn peak_live_bytes(&self) -> usize {
        self.peak_live_bytes
    }

    /// One past the highest arena byte any op has touched.
    pub fn touched_end_bytes(&self) -> usize {
        self.touched_end_bytes
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena.len() * VALUE_BYTES
    }

    fn touch(&mut self, id: usize) {
        let b = &self.plan.buffers[id];
        self.touched_end_bytes = self.touched_end_bytes.max(b.offset + b.bytes);
    }

    /// Forwards one already-normalized window and returns the per-sample
    /// probabilities, which live in the arena until the next call.
    pub fn run(&mut self, window: &[T]) -> Result<&[T]> {
        self.load_input(window, false)?;
        self.execute()
    }

    /// Min-max normalizes `window` in the arena, then forwards it.
    pub fn run_raw(&mut self, window: &[T]) -> Result<&[T]> {
        self.load_input(window, true)?;
        self.execute()
    }

    fn load_input(&mut self, window: &[T], normalize: bool) -> Result<()> {
        if window.len() != self.plan.input_len {
            return Err(Error::input(format!(
                "window has {} samples, model expects {}",
                window.len(),
                self.plan.input_len
            )));
        }
        let (off, len) = span(&self.plan, 0);
        let dst = &mut self.arena[off..off + len];
        dst.copy_from_slice(window);
        if normalize {
            minmax_normalize_inplace(dst);
        }
        self.touch(0);
        Ok(())
    }

    fn execute(&mut self) -> Result<&[T]> {
        let model = self.model;
        let mut live = self.plan.buffers[0].bytes;
        for i in 0..self.plan.ops.len() {
            let op = self.plan.ops[i];
            for b in &self.plan.buffers {
                if b.first_op == Some(i) {
                    live += b.bytes;
                }
            }
            self.peak_live_bytes = self.peak_live_bytes.max(live);
            self.touch(op.dst);
            let src = span(&self.plan, op.src);
            let dst = span(&self.plan, op.dst);
            let s_len = self.plan.buffers[op.src].len;
            match op.kind {
                OpKind::Depthwise { block } => {
                    let dw = model.blocks[block].depthwise.as_ref().expect("planned depthwise stage");
                    let (x, y) = split(&mut self.arena, src, dst);
                    conv1d_slice(dw, x, s_len, y, s_len);
                }
                OpKind::Pointwise { block } => {
                    let (x, y) = split(&mut self.arena, src, dst);
                    conv1d_slice(&model.blocks[block].conv, x, s_len, y, s_len);
                }
                OpKind::Normalize { block } => {
                    let b = &model.blocks[block];
                    let y = &mut self.arena[dst.0..dst.0 + dst.1];
                    for ch in 0..b.out_channels() {
                        batchnorm_eval_channel(&mut y[ch * s_len..(ch + 1) * s_len], &b.bn, ch);
                    }
                    apply_mask(y, s_len, model.mask_for(block));
                    if !b.pool {
                        relu_inplace(y);
                    }
                }
                OpKind::PoolRelu { block } => {
                    let c = model.blocks[block].out_channels();
                    let (x, y) = split(&mut self.arena, src, dst);
                    maxpool1d_slice(x, c, s_len, y, None);
                    relu_inplace(y);
                }
                OpKind::Branch { branch } => {
                    let row = (dst.0 + branch * s_len, s_len);
                    let (x, y) = split(&mut self.arena, src, row);
                    conv1d_slice(&model.branches[branch], x, s_len, y, s_len);
                }
                OpKind::Upsample => {
                    let factor = model.config.head_upsample_factor;
                    let c = self.plan.buffers[op.src].channels;
                    let (x, y) = split(&mut self.arena, src, dst);
                    upsample_slice(x, c, s_len, factor, y);
                }
                OpKind::Output => {
                    let (x, y) = split(&mut self.arena, src, dst);
                    conv1d_slice(&model.output_conv, x, s_len, y, s_len);
                    sigmoid_inplace(y);
                }
            }
            for b in &self.plan.buffers {
                if b.last_op == i {
                    live -= b.bytes;
                }
            }
        }
        let out = *self.plan.ops.last().map(|o| &o.dst).expect("non-empty program");
        let (off, len) = span(&self.plan, out);
        Ok(&self.arena[off..off + len])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamConfig {
    pub window: usize,
    pub hop: usize,
    pub threshold: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { window: 1920, hop: 1920, threshold: 0.5 }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.hop > self.window {
            return Err(Error::config(format!(
                "need 0 < hop <= window, got window {} hop {}",
                self.window, self.hop
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    /// Number of full windows in a stream of `n` samples.
    pub fn window_count(&self, n: usize) -> usize {
        if n < self.window {
            0
        } else {
            (n - self.window) / self.hop + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowResult<T: Real = f32> {
    pub index: usize,
    /// Stream position of the first sample.
    pub start: usize,
    pub probs: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> WindowResult<T> {
    /// Artifact runs as `(offset within window, length)`.
    pub fn artifact_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &m) in self.mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.mask.len() - s));
        }
        runs
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamStats {
    pub windows_processed: usize,
    /// Host wall time per window in seconds.
    pub window_seconds: Vec<f64>,
    pub mean_latency: f64,
    pub max_latency: f64,
    pub peak_bytes: usize,
    pub arena_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput<T: Real = f32> {
    pub windows: Vec<WindowResult<T>>,
    pub stats: StreamStats,
}

/// Slides a window over `samples`, normalizing and segmenting each full
/// window inside the planned arena. A trailing partial window is dropped.
pub fn infer_stream<T: Real>(model: &TinyPpg<T>, samples: &[T], cfg: &StreamConfig) -> Result<StreamOutput<T>> {
    cfg.validate()?;
    if cfg.window != model.config.input_len {
        return Err(Error::config(format!(
            "window {} does not match the model input length {}",
            cfg.window, model.config.input_len
        )));
    }
    let mut exec = ArenaExecutor::new(model)?;
    let threshold = T::from(cfg.threshold).expect("threshold fits the float type");
    let n = cfg.window_count(samples.len());
    let mut windows = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for index in 0..n {
        let start = index * cfg.hop;
        let t0 = Instant::now();
        let probs = exec.run_raw(&samples[start..start + cfg.window])?;
        let mask = probs.iter().map(|&p| p >= threshold).collect();
        let probs = probs.to_vec();
        times.push(t0.elapsed().as_secs_f64());
        windows.push(WindowResult { index, start, probs, mask });
    }
    let mean_latency = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
    let max_latency = times.iter().copied().fold(0.0, f64::max);
    debug_assert!(exec.touched_end_bytes() <= exec.arena_bytes());
    Ok(StreamOutput {
        windows,
        stats: StreamStats {
            windows_processed: n,
            window_seconds: times,
            mean_latency,
            max_latency,
            peak_bytes: exec.peak_live_bytes(),
            arena_bytes: exec.arena_bytes(),
        },
    })
}
