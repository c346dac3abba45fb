"""Integer encoding of straight-line statevector programs.

A program is an ``(n_ops, 6)`` int64 array.  Column 0 is the opcode, the
remaining columns are operands whose meaning depends on the opcode:

=========  =========  ===========  ===========  ==========  ==========
opcode     a          b            c            d           e
=========  =========  ===========  ===========  ==========  ==========
FLIP       lane       -            -            -           -
ROT        lane       angle ref    -            -           -
NEURON     neuron id  -            -            -           ckpt slot
PROJECT    lane mask  value        output slot  -           ckpt slot
MARGINAL   aux start  lane count   output slot  CE target   -
=========  =========  ===========  ===========  ==========  ==========

An angle ref ``r >= 0`` reads ``params[r]``; ``r < 0`` reads
``consts[-1 - r]``.  ``value`` is the projected outcome already shifted into
statevector index space.  A MARGINAL's lanes live in ``aux[start:start+count]``
(first lane is the least significant outcome bit).  The CE target column is
only read by the fused training kernel (``-1`` means no loss term).
"""

FLIP = 0
ROT = 1
NEURON = 2
PROJECT = 3
MARGINAL = 4

WIDTH = 6

NAMES = {FLIP: "flip", ROT: "rot", NEURON: "neuron", PROJECT: "project", MARGINAL: "marginal"}

#: Return code of a forward run that finished without an impossible projection.
OK = -1
