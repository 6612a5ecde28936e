"""bathyloc 异常定义

exit_code 2: 配置/校验/解析错误；exit_code 3: 运行期/数值错误。
"""


class BathyLocError(Exception):
    exit_code = 3

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# 输入与配置
class ConfigError(BathyLocError):
    exit_code = 2


class GridParseError(BathyLocError):
    exit_code = 2

    def __init__(self, key: str, message: str = ""):
        super().__init__(f"ESRI grid header error at '{key}'" + (f": {message}" if message else ""))
        self.key = key


class DimensionMismatchError(BathyLocError):
    exit_code = 2


class GridValueError(BathyLocError):
    exit_code = 2


# 运行期
class OutOfBoundsError(BathyLocError):
    def __init__(self, x: float, y: float):
        super().__init__(f"position ({x:.6g}, {y:.6g}) is outside the interpolable grid")
        self.x = x
        self.y = y


class NoDataError(OutOfBoundsError):
    def __init__(self, x: float, y: float):
        BathyLocError.__init__(self, f"position ({x:.6g}, {y:.6g}) touches a nodata cell")
        self.x = x
        self.y = y


class NumericError(BathyLocError):
    pass


class DivergenceError(BathyLocError):
    def __init__(self, message: str, last_belief=None):
        super().__init__(message)
        self.last_belief = last_belief
