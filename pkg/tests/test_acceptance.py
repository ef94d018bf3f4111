"""The eleven pinned acceptance checks at their stated scale (several minutes in total)."""
import json

import pytest

from treepark import acceptance
from treepark.harness import _jsonable


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    r = acceptance.run_criterion(number)
    with capsys.disabled():
        print()
        print(r.line())
        if not r.passed:
            print("    " + json.dumps(_jsonable(r.details)))
    assert r.passed, json.dumps(_jsonable(r.details))
