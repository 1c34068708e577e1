import logging
import sqlite3

import pandas as pd

log = logging.getLogger(__name__)


class Sql(object):
    """Reads and writes experiment result tables in an sqlite
    results database.

    Parameters:

        path_OR_dbconn: str or sqlite3.Connection
            Path of the results db file, created on first write,
            or an open connection

    Examples:

        >>> db = Sql("runs/desk/results.db")
        >>> db.pd2table(sweep, "beta_sweep")
        >>> curve = db.table2pd("eval_curve")
    """

    def __init__(self, path_OR_dbconn):
        if isinstance(path_OR_dbconn, str):
            self.db = sqlite3.connect(path_OR_dbconn)
        elif isinstance(path_OR_dbconn, sqlite3.Connection):
            self.db = path_OR_dbconn
        else:
            msg = "Expected a results db path or an sqlite3 connection, got {}."
            log.error(msg.format(type(path_OR_dbconn).__name__))
            raise ValueError(msg.format(type(path_OR_dbconn).__name__))

    def table_names(self):
        """Names of the stored result tables, sorted."""
        rows = self.db.execute(
            "SELECT name FROM sqlite_master WHERE type='table' ORDER BY name;"
        ).fetchall()
        return [row[0] for row in rows]

    def tables2dict(self, close=True):
        """Every result table as a dataframe.

        Parameters:

            close: boolean, default=True
                If True, closes the connection afterwards

        Returns:

            data: dict
                {table name: pd.DataFrame}
        """
        data = {name: self.table2pd(name) for name in self.table_names()}

        if close:
            self.db.close()

        return data

    def table2pd(self, table_name):
        """One result table as a dataframe.

        Raises:

            ValueError if the table does not exist
        """
        names = self.table_names()
        if table_name not in names:
            msg = "No result table '{}', the db holds {}."
            log.error(msg.format(table_name, names))
            raise ValueError(msg.format(table_name, names))

        return pd.read_sql_query(
            'SELECT * FROM "{}"'.format(table_name), self.db
        )

    def pd2table(self, df, table_name, if_exists="replace", close=False):
        """Stores a result dataframe, without its index.

        Parameters:

            df: pd.DataFrame

            table_name: str

            if_exists: str, default='replace'
                'replace' overwrites an earlier run of the same
                command, 'append' adds rows

            close: boolean, default=False
                If True, closes the connection afterwards
        """
        df.to_sql(table_name, self.db, if_exists=if_exists, index=False)
        self.db.commit()

        log.debug("Stored {} rows in table {}.".format(df.shape[0], table_name))

        if close:
            self.db.close()

        return True

    def close(self):
        self.db.close()
