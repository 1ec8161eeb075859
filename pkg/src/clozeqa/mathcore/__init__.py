from .checkpoint import (
    CheckpointError,
    apply_params,
    load_params,
    params_to_document,
    save_params,
)
from .gradcheck import grad_check
from .nn import GruParams, MlpParams, bigru, gru_sequence, mlp_forward, softmax, softmax_rows, uniform_init
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_vec,
    gather_rows,
    hstack2,
    log,
    matmul,
    max_vec,
    mean_axis0,
    mul,
    mul_rows,
    no_grad,
    pick,
    row,
    scale,
    stack_vec,
    sub,
    take_vec,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "CheckpointError",
    "GruParams",
    "MlpParams",
    "ShapeError",
    "Tensor",
    "add",
    "apply_params",
    "bigru",
    "concat_vec",
    "gather_rows",
    "grad_check",
    "gru_sequence",
    "hstack2",
    "load_params",
    "log",
    "matmul",
    "max_vec",
    "mean_axis0",
    "mlp_forward",
    "mul",
    "mul_rows",
    "no_grad",
    "params_to_document",
    "pick",
    "row",
    "save_params",
    "scale",
    "softmax",
    "softmax_rows",
    "stack_vec",
    "sub",
    "take_vec",
    "tanh",
    "transpose",
    "tsum",
    "uniform_init",
]
