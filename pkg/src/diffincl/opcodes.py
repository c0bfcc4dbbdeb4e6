"""Bytecode for compiled expressions.

A program is a flat int32 array of ``(opcode, operand)`` pairs evaluated on a
value stack.  Opcodes at ``DUAL + op`` run the same operation on (value,
tangent) pairs; they are emitted for the body of a ``diff(expr, var)`` node,
whose result is taken with ``TANGENT``.  The numbering is mirrored in
``_kernels.pyx``; keep both in sync.
"""

CONST = 0
VAR = 1
NEG = 2
SIN = 3
COS = 4
TAN = 5
EXP = 6
LOG = 7
SQRT = 8
ABS = 9
SIGN = 10
ADD = 11
SUB = 12
MUL = 13
DIV = 14
POW = 15
MIN = 16
MAX = 17

DUAL = 32
SEED = 60  # dual variable with unit tangent
TANGENT = 61

UNARY = {"neg": NEG, "sin": SIN, "cos": COS, "tan": TAN, "exp": EXP, "log": LOG,
         "sqrt": SQRT, "abs": ABS, "sign": SIGN}
BINARY = {"+": ADD, "-": SUB, "*": MUL, "/": DIV, "^": POW, "min": MIN, "max": MAX}

# kernel status codes
OK = 0
ERR_LOG = 1
ERR_SQRT = 2
ERR_DIV = 3
ERR_POW = 4
ERR_NONFINITE = 5
ERR_OPCODE = 6

STATUS_MESSAGES = {
    ERR_LOG: "log of non-positive value",
    ERR_SQRT: "sqrt of negative value (or its derivative at 0)",
    ERR_DIV: "division by zero",
    ERR_POW: "invalid power (negative base with non-integer exponent, or 0 to a negative power)",
    ERR_NONFINITE: "non-finite result",
    ERR_OPCODE: "corrupt program",
}
