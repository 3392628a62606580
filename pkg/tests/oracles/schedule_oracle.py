"""Decision dates by direct calendar enumeration with the datetime module."""
import datetime as dt


def first_weekday(year, month):
    d = dt.date(year, month, 1)
    while d.weekday() >= 5:
        d += dt.timedelta(days=1)
    return d


if __name__ == "__main__":
    # 36 months 2019-01..2021-12, 12-month lookback, warm-up 2019: decisions 2020-01..2021-12
    dates = [first_weekday(y, m) for y in (2020, 2021) for m in range(1, 13)]
    print(len(dates), [d.isoformat() for d in dates])
