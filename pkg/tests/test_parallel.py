from gramstab import build_coupling, parse_dipole
from gramstab.control_cost import cost_scaling_experiment
from gramstab.parallel import ordered_map, thread_count


def test_thread_count_env(monkeypatch):
    monkeypatch.delenv("GRAMSTAB_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("GRAMSTAB_THREADS", "3")
    assert thread_count() == 3


def test_ordered_map_keeps_order(monkeypatch):
    monkeypatch.setenv("GRAMSTAB_THREADS", "4")
    assert ordered_map(lambda x: x * x, range(20)) == [x * x for x in range(20)]


def test_threaded_grid_matches_serial(monkeypatch):
    cpl = build_coupling(parse_dipole("builtin:xsq"), 4)
    monkeypatch.setenv("GRAMSTAB_THREADS", "1")
    serial = cost_scaling_experiment(cpl, [2, 4], [0.5, 0.2])
    monkeypatch.setenv("GRAMSTAB_THREADS", "4")
    threaded = cost_scaling_experiment(cpl, [2, 4], [0.5, 0.2])
    assert serial == threaded
