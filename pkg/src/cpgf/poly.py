"""Sparse exact polynomials in ``p``, ``H`` and ``sigma^2``."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Iterator, Mapping

Exponent = tuple  # (q, n, l)


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


class MonomialPoly:
    """Polynomial ``sum c * p^q * H^n * sigma^(2l)`` with rational coefficients.

    Terms are keyed by the exponent triple ``(q, n, l)``. Zero coefficients are
    never stored. The pure-target constant ``p/2`` is the term ``(1, 0, 0)``
    and is exposed separately through :attr:`scalar`.

    Parameters
    ----------
    terms : mapping, optional
        ``{(q, n, l): coefficient}``.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Exponent, object] | None = None):
        self._terms: dict[Exponent, Fraction] = {}
        if terms:
            for key, c in terms.items():
                self._add(tuple(int(k) for k in key), _as_fraction(c))

    def _add(self, key, c):
        if not c:
            return
        v = self._terms.get(key, 0) + c
        if v:
            self._terms[key] = v
        else:
            self._terms.pop(key, None)

    # container protocol
    def __iter__(self) -> Iterator[Exponent]:
        return iter(self._terms)

    def __len__(self):
        return len(self._terms)

    def __contains__(self, key):
        return key in self._terms

    def __getitem__(self, key) -> Fraction:
        return self._terms.get(key, Fraction(0))

    def items(self):
        return self._terms.items()

    def __bool__(self):
        return bool(self._terms)

    def __eq__(self, other):
        if isinstance(other, MonomialPoly):
            return self._terms == other._terms
        if other == 0:
            return not self._terms
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self):
        inner = ", ".join(f"{k}: {v}" for k, v in sorted(self._terms.items(), key=_order))
        return f"MonomialPoly({{{inner}}})"

    # algebra
    def __add__(self, other: "MonomialPoly") -> "MonomialPoly":
        out = self.copy()
        for k, c in other.items():
            out._add(k, c)
        return out

    def __neg__(self):
        return MonomialPoly({k: -c for k, c in self.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor) -> "MonomialPoly":
        factor = _as_fraction(factor)
        if not factor:
            return MonomialPoly()
        return MonomialPoly({k: c * factor for k, c in self.items()})

    def __mul__(self, other):
        if isinstance(other, MonomialPoly):
            out = MonomialPoly()
            for (q1, n1, l1), c1 in self.items():
                for (q2, n2, l2), c2 in other.items():
                    out._add((q1 + q2, n1 + n2, l1 + l2), c1 * c2)
            return out
        return self.scale(other)

    __rmul__ = __mul__

    def copy(self) -> "MonomialPoly":
        out = MonomialPoly()
        out._terms = dict(self._terms)
        return out

    # views
    @property
    def scalar(self) -> Fraction:
        """Coefficient of the weight-free term ``p^1 H^0 sigma^0``."""
        return self[(1, 0, 0)]

    def weight_terms(self) -> "MonomialPoly":
        """Terms carrying at least one power of ``sigma^2``."""
        return MonomialPoly({k: c for k, c in self.items() if k[2] > 0})

    def with_l(self, l: int) -> "MonomialPoly":
        return MonomialPoly({k: c for k, c in self.items() if k[2] == l})

    def evaluate(self, p, H, sigma2):
        """Evaluate at concrete values.

        Exact when all arguments are integers or :class:`~fractions.Fraction`,
        floating point otherwise.
        """
        return sum((c * p**q * H**n * sigma2**l for (q, n, l), c in self.items()), Fraction(0))

    def in_sigma2(self, p, H) -> dict[int, Fraction]:
        """Collapse to a univariate polynomial in ``sigma^2`` at fixed ``p, H``.

        Returns
        -------
        dict
            ``{l: coefficient}`` with zero coefficients dropped.
        """
        out: dict[int, Fraction] = {}
        for (q, n, l), c in self.items():
            out[l] = out.get(l, 0) + c * Fraction(p) ** q * Fraction(H) ** n
        return {l: c for l, c in out.items() if c}

    # serialization
    def dump(self) -> str:
        """One ``q n l num/den`` line per term, sorted by ``(l, q, n)``."""
        lines = []
        for (q, n, l), c in sorted(self.items(), key=_order):
            lines.append(f"{q} {n} {l} {c.numerator}/{c.denominator}")
        return "\n".join(lines)

    @classmethod
    def parse(cls, text: str | Iterable[str]) -> "MonomialPoly":
        lines = text.splitlines() if isinstance(text, str) else text
        out = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            q, n, l, c = line.split()
            out._add((int(q), int(n), int(l)), Fraction(c))
        return out


def _order(item):
    (q, n, l), _ = item
    return (l, q, n)
