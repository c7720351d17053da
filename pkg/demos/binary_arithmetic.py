"""Why XNOR + popcount gives the same answer as a float dot product.

Run: python3 demos/binary_arithmetic.py
"""

import numpy as np

from bnnfake.binops import ConvSpec, binary_conv2d, compute_alpha, conv2d_ref
from bnnfake.tensor import pack, sign, unpack, xnor_popcount_dot

rng = np.random.default_rng(5)

# Two +-1 vectors. Bit 1 stands for +1, bit 0 for -1.
a = sign(rng.standard_normal(100))
b = sign(rng.standard_normal(100))
pa, pb = pack(a), pack(b)
print("packed words:", pa.words.shape, "for", pa.n, "elements")
print("float dot   :", int(a @ b))
print("xnor/popcnt :", xnor_popcount_dot(pa, pb))
assert np.array_equal(unpack(pa), a)

# A 3x3 conv layer: real weights become sign(w) scaled by mean|w| per filter.
spec = ConvSpec(8, 4, 3, 3, stride=1, padding=1)
w = rng.standard_normal(spec.weight_shape)
x = rng.standard_normal((8, 16, 16))
alpha = compute_alpha(w)
y_bin = binary_conv2d(x, pack(sign(w).reshape(4, -1)), alpha, spec)
y_fp = conv2d_ref(x, w, spec)
print("alpha per filter:", np.round(alpha.alpha, 3))
print("correlation of binary vs float outputs: %.3f" % np.corrcoef(y_bin.ravel(), y_fp.ravel())[0, 1])
print("weight storage: %d float bytes vs %d packed bytes"
      % (4 * w.size, pack(sign(w).reshape(-1)).words.nbytes))
