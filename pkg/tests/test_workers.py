import time

from hartree_lab.workers import run_parallel


def _slow_square(x, delay):
    time.sleep(delay)
    return x * x


def test_results_come_back_in_submission_order():
    args = [(i, 0.05 * (4 - i)) for i in range(5)]
    assert run_parallel(_slow_square, args, max_workers=5) == [0, 1, 4, 9, 16]


def test_single_worker():
    assert run_parallel(_slow_square, [(3, 0.0), (2, 0.0)], max_workers=1) == [9, 4]


def test_empty_job_list():
    assert run_parallel(_slow_square, []) == []
