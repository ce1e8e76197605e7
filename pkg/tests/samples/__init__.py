#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from .data import (noise_gradients, shifted_pair, ramp_image, constant_field, field_from_blocks, interior_mask,
                   noise_pair, write_pair, framed_pair)
