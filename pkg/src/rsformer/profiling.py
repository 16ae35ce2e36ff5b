"""Analytic cost model: exact multiplication/addition/parameter counts.

Convention: a dot product of length ``m`` costs ``m`` multiplications and
``m - 1`` additions; a bias adds one addition per output element.  With it,
transposed and spatial attention at (n=4096, c=32) come out to
8,388,608 / 8,256,512 and 1,073,741,824 / 1,056,833,536.

Model FLOPs are reported as multiplication counts of every convolution, the
attention matrix chains, the convolution-attention element-wise product and
the layer-scale multiplies.
Normalization, activations, softmax and residual additions are not counted.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass
from typing import Optional

import torch

from .errors import ConfigError, ContractError
from .network import ModelConfig


@dataclass
class OpCountReport:
    multiplications: int = 0
    additions: int = 0
    parameters: int = 0
    wall_clock_seconds: Optional[float] = None

    def __add__(self, other):
        if not isinstance(other, OpCountReport):
            return NotImplemented
        return OpCountReport(
            self.multiplications + other.multiplications,
            self.additions + other.additions,
            self.parameters + other.parameters,
        )

    def scaled(self, k: int):
        """Counts for ``k`` independent repetitions (parameters are shared)."""
        return OpCountReport(self.multiplications * k, self.additions * k, self.parameters)

    def to_dict(self):
        return asdict(self)


def count_matmul_chain(dims):
    """Count the products of a chain of matrices given as ``(rows, cols)`` pairs.

    Each consecutive product ``(a x b)(b x c)`` costs ``a*b*c`` multiplications
    and ``a*(b-1)*c`` additions; the result ``(a x c)`` feeds the next product.
    """
    dims = [tuple(int(v) for v in d) for d in dims]
    if len(dims) < 2:
        raise ContractError("a matmul chain needs at least two matrices")
    if any(len(d) != 2 or min(d) < 1 for d in dims):
        raise ContractError(f"matrix shapes must be positive (rows, cols) pairs, got {dims}")
    mults = adds = 0
    a, b = dims[0]
    for i, (b2, c) in enumerate(dims[1:], start=1):
        if b2 != b:
            raise ContractError(f"nonconformable chain at product {i}: ({a}x{b}) times ({b2}x{c})")
        mults += a * b * c
        adds += a * (b - 1) * c
        b = c
    return OpCountReport(mults, adds)


def transposed_attention_cost(n_qk, c, n_v=None):
    """Raw-mode ``Q^T K`` then ``M V^T`` for one batch item."""
    n_v = n_qk if n_v is None else n_v
    return count_matmul_chain([(c, n_qk), (n_qk, c)]) + count_matmul_chain([(c, c), (c, n_v)])


def spatial_attention_cost(n, c):
    """Raw-mode ``Q K^T`` then ``S V`` for one batch item."""
    return count_matmul_chain([(n, c), (c, n)]) + count_matmul_chain([(n, n), (n, c)])


def attention_cost_table(n=4096, c=32):
    """The transposed-vs-spatial self-attention cost comparison at (1, n, c)."""
    return {"transposed": transposed_attention_cost(n, c), "spatial": spatial_attention_cost(n, c)}


def format_attention_costs(rows):
    lines = [f"{'Self-attention':<14}  {'Production':>15}  {'Addition':>15}"]
    for name, r in rows.items():
        lines.append(f"{name.capitalize():<14}  {r.multiplications:>15,d}  {r.additions:>15,d}")
    return "\n".join(lines)


def conv2d_cost(cin, cout, k, h_out, w_out, groups=1, bias=True, batch=1):
    """Per output element: ``cin/groups * k*k`` multiplications."""
    if cin % groups or cout % groups:
        raise ConfigError(f"groups={groups} must divide cin={cin} and cout={cout}")
    taps = (cin // groups) * k * k
    outputs = batch * cout * h_out * w_out
    return OpCountReport(
        multiplications=outputs * taps,
        additions=outputs * (taps - 1) + (outputs if bias else 0),
        parameters=cout * taps + (cout if bias else 0),
    )


def conv_transpose2x2_cost(cin, cout, h_out, w_out, bias=True, batch=1):
    """2x2 stride-2 transposed convolution: every output element sees ``cin`` taps."""
    outputs = batch * cout * h_out * w_out
    return OpCountReport(
        multiplications=outputs * cin,
        additions=outputs * (cin - 1) + (outputs if bias else 0),
        parameters=cin * cout * 4 + (cout if bias else 0),
    )


def _elementwise(count, params=0):
    return OpCountReport(multiplications=count, additions=0, parameters=params)


def _params_only(params):
    return OpCountReport(parameters=params)


def _tcb_costs(prefix, c, h, w, n, config: ModelConfig):
    out = {}
    hidden = int(round(config.ffn_expansion * c))
    k = config.attention_kernel
    out[f"{prefix}.norm1"] = _params_only(2 * c)
    out[f"{prefix}.norm2"] = _params_only(2 * c)
    # layer scales multiply every element of their branch
    out[f"{prefix}.gamma1"] = _elementwise(n * c * h * w, c)
    out[f"{prefix}.gamma2"] = _elementwise(n * c * h * w, c)
    m = f"{prefix}.mixer"
    if config.token_mixer == "cam":
        out[f"{m}.attn_proj"] = conv2d_cost(c, c, 1, h, w, batch=n)
        out[f"{m}.attn_dw"] = conv2d_cost(c, c, k, h, w, groups=c, batch=n)
        out[f"{m}.value_proj"] = conv2d_cost(c, c, 1, h, w, batch=n)
        out[f"{m}.product"] = _elementwise(n * c * h * w)
        out[f"{m}.out_proj"] = conv2d_cost(c, c, 1, h, w, batch=n)
    elif config.token_mixer == "tsa":
        out[f"{m}.qkv"] = conv2d_cost(c, 3 * c, 1, h, w, batch=n)
        out[f"{m}.qkv_dw"] = conv2d_cost(3 * c, 3 * c, 3, h, w, groups=3 * c, batch=n)
        out[f"{m}.attention"] = transposed_attention_cost(h * w, c).scaled(n) + _params_only(1)
        out[f"{m}.out_proj"] = conv2d_cost(c, c, 1, h, w, batch=n)
    f = f"{prefix}.ffn"
    out[f"{f}.expand"] = conv2d_cost(c, hidden, 1, h, w, batch=n)
    out[f"{f}.dw"] = conv2d_cost(hidden, hidden, 3, h, w, groups=hidden, batch=n)
    out[f"{f}.project"] = conv2d_cost(hidden, c, 1, h, w, batch=n)
    return out


def _sampler_costs(prefix, down, c_src, h_src, w_src, n, config: ModelConfig):
    out = {}
    mode = config.sampling_mode
    if down:
        c_t, h_t, w_t = 2 * c_src, h_src // 2, w_src // 2
    else:
        c_t, h_t, w_t = c_src // 2, 2 * h_src, 2 * w_src
    if mode in ("glasm", "gasm"):
        if down:
            out[f"{prefix}.value_resample"] = conv2d_cost(c_src, c_t, 3, h_t, w_t, batch=n)
        else:
            out[f"{prefix}.value_resample"] = conv_transpose2x2_cost(c_src, c_t, h_t, w_t, batch=n)
        if config.attention_sampling_core == "transposed":
            out[f"{prefix}.query"] = conv2d_cost(c_src, c_t, 1, h_src, w_src, batch=n)
            out[f"{prefix}.key"] = conv2d_cost(c_src, c_t, 1, h_src, w_src, batch=n)
            chain = transposed_attention_cost(h_src * w_src, c_t, h_t * w_t)
        else:
            out[f"{prefix}.query"] = conv2d_cost(c_t, c_t, 1, h_t, w_t, batch=n)
            out[f"{prefix}.key"] = conv2d_cost(c_t, c_t, 1, h_t, w_t, batch=n)
            chain = spatial_attention_cost(h_t * w_t, c_t)
        out[f"{prefix}.attention"] = chain.scaled(n) + _params_only(1)
        if mode == "glasm":
            out[f"{prefix}.local"] = conv2d_cost(c_t, c_t, 3, h_t, w_t, groups=c_t, batch=n)
    elif mode == "conv":
        if down:
            out[f"{prefix}.conv"] = conv2d_cost(c_src, c_t, 3, h_t, w_t, batch=n)
        else:
            out[f"{prefix}.conv"] = conv_transpose2x2_cost(c_src, c_t, h_t, w_t, batch=n)
    elif mode == "shuffle":
        if down:
            out[f"{prefix}.proj"] = conv2d_cost(4 * c_src, c_t, 1, h_t, w_t, batch=n)
        else:
            out[f"{prefix}.proj"] = conv2d_cost(c_src, 2 * c_src, 1, h_src, w_src, batch=n)
    return out, (c_t, h_t, w_t)


def model_cost_breakdown(config: ModelConfig, input_shape=(1, 3, 256, 256)):
    """Per-module analytic costs keyed by the model's module names."""
    config.validate()
    if len(input_shape) != 4 or input_shape[1] != 3:
        raise ContractError(f"input shape must be (N, 3, H, W), got {tuple(input_shape)}")
    n, _, h, w = (int(v) for v in input_shape)
    m = config.multiple
    if h % m or w % m:
        raise ContractError(f"input height and width must be divisible by {m}, got {(h, w)}")
    widths = config.widths
    blocks = config.blocks_per_stage
    levels = config.levels
    costs = {"stem": conv2d_cost(3, widths[0], 3, h, w, batch=n)}
    c = widths[0]
    for level in range(levels - 1):
        for b in range(blocks[level]):
            costs.update(_tcb_costs(f"encoders.{level}.{b}", c, h, w, n, config))
        sampler, (c, h, w) = _sampler_costs(f"downs.{level}", True, c, h, w, n, config)
        costs.update(sampler)
    for b in range(blocks[levels - 1]):
        costs.update(_tcb_costs(f"bottleneck.{b}", c, h, w, n, config))
    for i in range(levels - 1):
        sampler, (c, h, w) = _sampler_costs(f"ups.{i}", False, c, h, w, n, config)
        costs.update(sampler)
        if config.skip_fusion == "concat_project":
            costs[f"fusions.{i}"] = conv2d_cost(2 * c, c, 1, h, w, batch=n)
        for b in range(blocks[levels + i]):
            costs.update(_tcb_costs(f"decoders.{i}.{b}", c, h, w, n, config))
    costs["head"] = conv2d_cost(widths[0], 3, 3, h, w, batch=n)
    return costs


def count_model_flops(config: ModelConfig, input_shape=(1, 3, 256, 256)):
    """Total analytic cost of one forward pass, plus the exact parameter count."""
    total = OpCountReport()
    for report in model_cost_breakdown(config, input_shape).values():
        total = total + report
    return total


def measure_inference(model, shape=(1, 3, 256, 256), runs=100, warmup=1):
    """Per-run wall-clock seconds of ``infer`` on a fixed random input."""
    from .network import infer

    if runs < 1:
        raise ContractError(f"runs must be >= 1, got {runs}")
    param = next(model.parameters())
    g = torch.Generator().manual_seed(0)
    x = torch.rand(shape, generator=g, dtype=param.dtype)
    model.eval()
    for _ in range(warmup):
        infer(model, x)
    timings = []
    for _ in range(runs):
        start = time.perf_counter()
        infer(model, x)
        timings.append(time.perf_counter() - start)
    return timings


def time_inference(model, shape=(1, 3, 256, 256), runs=100, warmup=1):
    """Mean inference seconds over ``runs`` after warm-up.

    Run on an otherwise idle device; concurrent load skews the result.
    """
    return statistics.fmean(measure_inference(model, shape, runs, warmup))


def format_breakdown(costs, depth=1):
    """Aggregate a breakdown to ``depth`` dotted name components as a text table."""
    groups = {}
    for name, report in costs.items():
        key = ".".join(name.split(".")[:depth])
        groups[key] = groups.get(key, OpCountReport()) + report
    width = max(len(k) for k in groups)
    lines = [f"{'module':<{width}}  {'mults':>16}  {'adds':>16}  {'params':>12}"]
    for key, r in groups.items():
        lines.append(f"{key:<{width}}  {r.multiplications:>16,d}  {r.additions:>16,d}  {r.parameters:>12,d}")
    return "\n".join(lines)
