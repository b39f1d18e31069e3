from typing import Any, Callable, Optional

import numpy as np
from scipy import sparse

Array = np.ndarray
ParamDict = dict[str, np.ndarray]
SparseOperator = sparse.csr_matrix
MethodEntry = dict[str]
Attrs = dict[str, Any]

# (input values, attrs) -> (output value, saved context for the adjoint)
ForwardRule = Callable[[tuple[np.ndarray, ...], Attrs], tuple[np.ndarray, Any]]
# (output grad, input values, output value, saved context, attrs) -> one grad (or None) per input
BackwardRule = Callable[
    [np.ndarray, tuple[np.ndarray, ...], np.ndarray, Any, Attrs], tuple[Optional[np.ndarray], ...]
]
