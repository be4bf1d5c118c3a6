from typing import Sequence

import numpy as np

from koopman_rds.domain.models import EigMatchReport, MatchedPair
from koopman_rds.errors import InvalidArgumentError


def match_eigenvalues(
    computed: Sequence[complex], reference: Sequence[complex]
) -> EigMatchReport:
    """Greedy nearest-neighbour matching in the complex plane.

    Candidate pairs are taken by ascending ``|computed - reference|``; each
    value is used at most once and leftovers are counted as unmatched.
    """
    comp = np.asarray(computed, dtype=complex).ravel()
    ref = np.asarray(reference, dtype=complex).ravel()
    if comp.size == 0 or ref.size == 0:
        raise InvalidArgumentError("both eigenvalue lists must be non-empty")

    dist = np.abs(comp[:, None] - ref[None, :])
    order = np.argsort(dist, axis=None, kind="stable")
    used_c = np.zeros(comp.size, dtype=bool)
    used_r = np.zeros(ref.size, dtype=bool)
    matched = []
    for flat in order:
        i, j = divmod(int(flat), ref.size)
        if used_c[i] or used_r[j]:
            continue
        used_c[i] = used_r[j] = True
        matched.append((dist[i, j], comp[i], ref[j]))
        if len(matched) == min(comp.size, ref.size):
            break

    matched.sort(key=lambda t: (t[0], t[2].real, t[2].imag, t[1].real, t[1].imag))
    errors = np.array([m[0] for m in matched])
    return EigMatchReport(
        pairs=[
            MatchedPair(
                computed_re=float(c.real),
                computed_im=float(c.imag),
                reference_re=float(r.real),
                reference_im=float(r.imag),
                abs_error=float(e),
            )
            for e, c, r in matched
        ],
        l1=float(errors.sum()),
        l2=float(np.sqrt(np.sum(errors**2))),
        linf=float(errors.max()),
        unmatched_computed=int(comp.size - len(matched)),
        unmatched_reference=int(ref.size - len(matched)),
    )
