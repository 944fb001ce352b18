"""Why scan a grid in 2D?

Flatten an image row by row and two vertically adjacent pixels end up ``W``
steps apart in the sequence, so a decaying 1D scan weakens their interaction
by ``a**W``. The 2D scan decays with the Manhattan distance instead.
"""

from scan2d.reference import closed_form_constant, impulse_coefficient

alpha = 0.5
print("vertical neighbours in the last column, decay a = 0.5")
print(f"{'width':>5} {'2D coef':>9} {'1D coef':>12}")
for width in (3, 8, 14, 32):
    src, dst = (0, width - 1), (1, width - 1)
    c2 = impulse_coefficient("2d", src, dst, alpha, width, 2)
    c1 = impulse_coefficient("1d", src, dst, alpha, width, 2)
    print(f"{width:>5} {c2:>9.4g} {c1:>12.4g}")

# Horizontal neighbours are the other way round: one step in both orders.
print("\nhorizontal neighbours:", impulse_coefficient("2d", (3, 0), (3, 1), alpha, 8),
      impulse_coefficient("1d", (3, 0), (3, 1), alpha, 8))

# With constant parameters every upstream cell contributes a**manhattan, so the
# state is a product of two geometric sums.
print("\nconstant-parameter state at (2, 3) with a = 0.5:", closed_form_constant(0.5, 1.0, 2, 3))
