import os

import pytest

ROOT = os.path.join(os.path.dirname(__file__), '..')


@pytest.mark.flake8
@pytest.mark.linter
def test_flake8():
    legacy = pytest.importorskip('flake8.api.legacy')
    style = legacy.get_style_guide(max_line_length=120, extend_ignore=['E266'],
                                   exclude=['examples', 'build', '.eggs'])
    report = style.check_files([os.path.join(ROOT, 'irs_alloc'), os.path.join(ROOT, 'test')])
    errors = report.get_statistics('')
    assert report.total_errors == 0, \
        'Found %d code style errors / warnings:\n' % report.total_errors + \
        '\n'.join(errors)
