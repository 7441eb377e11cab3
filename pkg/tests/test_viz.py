import cv2
import numpy as np

from semflow.viz import disparity_to_color, error_to_color, flow_to_color


def test_flow_hue_encodes_direction():
    f = np.zeros((1, 4, 2))
    f[0, 0] = (1, 0)
    f[0, 1] = (0, 1)
    f[0, 2] = (-1, 0)
    f[0, 3] = (0, -1)
    rgb = flow_to_color(f)
    hue = cv2.cvtColor(rgb[None, 0], cv2.COLOR_RGB2HSV)[0, :, 0].astype(int)
    np.testing.assert_allclose(hue, [0, 45, 90, 134], atol=1)


def test_flow_zero_is_white_and_invalid_black():
    f = np.zeros((2, 2, 2))
    f[0, 0] = (3, 0)
    valid = np.array([[True, True], [True, False]])
    rgb = flow_to_color(f, valid)
    assert rgb.dtype == np.uint8 and rgb.shape == (2, 2, 3)
    np.testing.assert_array_equal(rgb[0, 1], [255, 255, 255])
    np.testing.assert_array_equal(rgb[1, 1], [0, 0, 0])


def test_disparity_color_monotone_in_red():
    d = np.array([[1.0, 50.0, 100.0, -1.0]])
    rgb = disparity_to_color(d)
    assert rgb[0, 2, 0] > rgb[0, 0, 0]
    assert rgb[0, 0, 2] > rgb[0, 2, 2]
    np.testing.assert_array_equal(rgb[0, 3], 0)


def test_error_colours():
    rgb = error_to_color(np.array([[True, False, True]]), np.array([[True, True, False]]))
    assert rgb[0, 0, 0] > rgb[0, 0, 1]
    assert rgb[0, 1, 1] > rgb[0, 1, 0]
    np.testing.assert_array_equal(rgb[0, 2], 0)
