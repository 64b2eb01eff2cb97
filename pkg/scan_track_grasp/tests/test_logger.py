import pytest

from utils.logger import Timer, asMinutes, write_to_record_file


def test_record_file_appends(tmp_path, capsys):
    path = tmp_path / 'log.txt'
    write_to_record_file('first', path)
    write_to_record_file('second', path, verbose=False)
    assert path.read_text() == 'first\nsecond\n'
    assert capsys.readouterr().out == 'first\n'


def test_as_minutes():
    assert asMinutes(125.) == '2m 5s'


def test_timer_rows_and_means():
    timer = Timer()
    for millis in (100., 10., 20.):
        timer.add('tracking', millis)
        timer.add('grasp', 1.)
        timer.step()
    timer.add('tracking/2', 4.)
    timer.step()
    assert len(timer.rows) == 4 and timer.iter == 4
    means = timer.means(skip=1)
    assert list(means) == ['tracking', 'grasp', 'tracking/2']
    assert means['tracking'] == pytest.approx(10.)
    assert means['tracking/2'] == pytest.approx(4. / 3.)
    # skipping every row falls back to all rows
    assert timer.means(skip=10)['tracking'] == pytest.approx(32.5)
    assert 'tracking, total time 0.13' in timer.show()


def test_tic_toc_fills_the_current_row():
    timer = Timer()
    timer.tic('assembly')
    timer.toc('assembly')
    row = timer.row()
    assert list(row) == ['assembly'] and row['assembly'] >= 0.
    timer.step()
    assert timer.row() == {}
