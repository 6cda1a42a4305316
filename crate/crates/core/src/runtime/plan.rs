use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::TinyPpg;
use crate::nn::Real;

/// Bytes per activation or weight value.
pub const VALUE_BYTES: usize = 4;

/// Default activation budget of the emulated device, 512 KiB.
pub const DEFAULT_BUDGET_BYTES: usize = 512 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    /// Depthwise convolution of block `block`.
    Depthwise { block: usize },
    /// Pointwise (or standard, for non-separable models) convolution of block `block`.
    Pointwise { block: usize },
    /// In-place batch norm, masking and (without pooling) ReLU.
    Normalize { block: usize },
    /// Max pooling followed by ReLU.
    PoolRelu { block: usize },
    /// Dilated branch `branch`, writing one row of the concatenated buffer.
    Branch { branch: usize },
    Upsample,
    /// Output convolution followed by the sigmoid.
    Output,
}

/// One step of the inference program. `src`/`dst` index into
/// [`MemoryPlan::buffers`]; in-place steps have `dst == src`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Op {
    pub kind: OpKind,
    pub src: usize,
    pub dst: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferPlan {
    pub name: String,
    pub channels: usize,
    pub len: usize,
    pub bytes: usize,
    /// Index of the producing op (`None` for the input window).
    pub first_op: Option<usize>,
    /// Index of the last op that reads or writes it.
    pub last_op: usize,
    /// Byte offset in the arena.
    pub offset: usize,
}

impl BufferPlan {
    fn live_at(&self, op: usize) -> bool {
        self.first_op.is_none_or(|f| f <= op) && op <= self.last_op
    }

    fn overlaps_in_time(&self, other: &BufferPlan) -> bool {
        let a0 = self.first_op.map_or(0, |f| f);
        let b0 = other.first_op.map_or(0, |f| f);
        a0 <= other.last_op && b0 <= self.last_op
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryPlan {
    pub ops: Vec<Op>,
    pub buffers: Vec<BufferPlan>,
    /// Bytes of every value inference reads: convolution weights and biases
    /// plus batch-norm scale, shift and running statistics.
    pub weight_bytes: usize,
    /// Largest sum of simultaneously live buffers over the program.
    pub peak_bytes: usize,
    /// Size of the arena holding every buffer at its assigned offset.
    pub arena_total_bytes: usize,
    /// Live bytes while each op runs.
    pub live_bytes: Vec<usize>,
    pub input_len: usize,
}

fn inference_weight_values<T: Real>(model: &TinyPpg<T>) -> usize {
    let bn: usize = model.blocks.iter().map(|b| 2 * b.bn.channels()).sum();
    model.count_parameters() + bn
}

impl MemoryPlan {
    /// Plans buffers for one window. The projection head is training-only
    /// and must be removed first.
    pub fn for_model<T: Real>(model: &TinyPpg<T>) -> Result<Self> {
        if model.head.is_some() {
            return Err(Error::state("model still carries the training-only projection head"));
        }
        let mut buffers: Vec<BufferPlan> = Vec::new();
        let mut ops: Vec<Op> = Vec::new();
        let new_buf = |buffers: &mut Vec<BufferPlan>, name: String, channels: usize, len: usize, first: Option<usize>| {
            buffers.push(BufferPlan {
                name,
                channels,
                len,
                bytes: channels * len * VALUE_BYTES,
                first_op: first,
                last_op: first.unwrap_or(0),
                offset: 0,
            });
            buffers.len() - 1
        };
        let mut len = model.config.input_len;
        let mut cur = new_buf(&mut buffers, "input".into(), 1, len, None);
        for (bi, b) in model.blocks.iter().enumerate() {
            if let Some(dw) = &b.depthwise {
                let dst = new_buf(&mut buffers, format!("block{}.depthwise", bi + 1), dw.out_channels, len, Some(ops.len()));
                ops.push(Op { kind: OpKind::Depthwise { block: bi }, src: cur, dst });
                cur = dst;
            }
            let dst = new_buf(&mut buffers, format!("block{}.pointwise", bi + 1), b.out_channels(), len, Some(ops.len()));
            ops.push(Op { kind: OpKind::Pointwise { block: bi }, src: cur, dst });
            cur = dst;
            ops.push(Op { kind: OpKind::Normalize { block: bi }, src: cur, dst: cur });
            if b.pool {
                len /= 2;
                let dst = new_buf(&mut buffers, format!("block{}.pool", bi + 1), b.out_channels(), len, Some(ops.len()));
                ops.push(Op { kind: OpKind::PoolRelu { block: bi }, src: cur, dst });
                cur = dst;
            }
        }
        let features = cur;
        let nb = model.branches.len();
        let concat = new_buf(&mut buffers, "pyramid".into(), nb, len, Some(ops.len()));
        for j in 0..nb {
            ops.push(Op { kind: OpKind::Branch { branch: j }, src: features, dst: concat });
        }
        let full = len * model.config.head_upsample_factor;
        let up = new_buf(&mut buffers, "upsample".into(), nb, full, Some(ops.len()));
        ops.push(Op { kind: OpKind::Upsample, src: concat, dst: up });
        let out = new_buf(&mut buffers, "output".into(), 1, full, Some(ops.len()));
        ops.push(Op { kind: OpKind::Output, src: up, dst: out });

        for (i, op) in ops.iter().enumerate() {
            for id in [op.src, op.dst] {
                buffers[id].last_op = buffers[id].last_op.max(i);
            }
        }
        let live_bytes: Vec<usize> = (0..ops.len())
            .map(|i| buffers.iter().filter(|b| b.live_at(i)).map(|b| b.bytes).sum())
            .collect();
        let peak_bytes = live_bytes.iter().copied().max().unwrap_or(0);
        let arena_total_bytes = assign_offsets(&mut buffers);
        Ok(Self {
            ops,
            buffers,
            weight_bytes: inference_weight_values(model) * VALUE_BYTES,
            peak_bytes,
            arena_total_bytes,
            live_bytes,
            input_len: model.config.input_len,
        })
    }

    pub fn fits(&self, budget_bytes: usize) -> bool {
        self.arena_total_bytes <= budget_bytes
    }

    /// Plain-text report with totals and one row per buffer.
    pub fn report(&self, budget_bytes: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "weight_bytes\t{}", self.weight_bytes);
        let _ = writeln!(s, "peak_bytes\t{}", self.peak_bytes);
        let _ = writeln!(s, "arena_bytes\t{}", self.arena_total_bytes);
        let _ = writeln!(s, "budget_bytes\t{budget_bytes}");
        let _ = writeln!(s, "fits_budget\t{}", if self.fits(budget_bytes) { "yes" } else { "no" });
        let _ = writeln!(s, "buffer\tchannels\tlength\tbytes\toffset\tfirst_op\tlast_op");
        for b in &self.buffers {
            let first = b.first_op.map_or_else(|| "-".to_string(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                b.name, b.channels, b.len, b.bytes, b.offset, first, b.last_op
            );
        }
        s
    }
}

/// Greedy first-fit placement, largest buffers first. Returns the arena size.
fn assign_offsets(buffers: &mut [BufferPlan]) -> usize {
    let mut order: Vec<usize> = (0..buffers.len()).collect();
    order.sort_by(|&a, &b| buffers[b].bytes.cmp(&buffers[a].bytes).then(a.cmp(&b)));
    let mut placed: Vec<usize> = Vec::new();
    let mut total = 0;
    for id in order {
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&p| buffers[p].overlaps_in_time(&buffers[id]))
            .map(|&p| (buffers[p].offset, buffers[p].offset + buffers[p].bytes))
            .collect();
        busy.sort_unstable();
        let mut offset = 0;
        for (start, end) in busy {
            if offset + buffers[id].bytes <= start {
                break;
            }
            offset = offset.max(end);
        }
        buffers[id].offset = offset;
        total = total.max(offset + buffers[id].bytes);
        placed.push(id);
    }
    total
}
