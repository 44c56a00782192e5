import pytest

from exporter_helpers import fake_image_dataset


@pytest.fixture
def fake_data():
    return fake_image_dataset(512)
