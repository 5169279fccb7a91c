# SPDX-FileCopyrightText: 2024-present coarse-hydro contributors
#
# SPDX-License-Identifier: MIT
__version__ = "0.4.0"
