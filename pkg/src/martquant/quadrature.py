"""Adaptive Simpson integration used for per-cell distortion integrals."""

from .errors import QuadratureError

__all__ = ["adaptive_simpson"]

_MAX_DEPTH = 60


def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _recurse(f, a, fa, b, fb, m, fm, whole, tol, depth):
    lm, flm, left = _simpson(f, a, fa, m, fm)
    rm, frm, right = _simpson(f, m, fm, b, fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * tol or depth >= _MAX_DEPTH:
        if depth >= _MAX_DEPTH and abs(delta) > 15.0 * tol:
            raise QuadratureError(
                f"adaptive Simpson hit depth {depth} on [{a}, {b}] "
                f"with residual {abs(delta):.3e}"
            )
        return left + right + delta / 15.0
    half = tol / 2.0
    return _recurse(f, a, fa, m, fm, lm, flm, left, half, depth + 1) + _recurse(
        f, m, fm, b, fb, rm, frm, right, half, depth + 1
    )


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-12) -> float:
    """Integrate ``f`` on ``[a, b]`` to absolute tolerance ``tol``.

    Raises :class:`QuadratureError` when the recursion cannot meet the
    tolerance within the depth limit.
    """
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m, fm, whole = _simpson(f, a, fa, b, fb)
    return _recurse(f, a, fa, b, fb, m, fm, whole, tol, 0)
