"""
Report figures.
"""
import matplotlib
import matplotlib.pyplot as plt


SVG_SALT = 'gentract'


def precision_time_scatter(reports, path, base_marker=12.0, ax=None,
                           **plot_params):
    """Scatter of precision against generation time, one marker per
    report, with marker area proportional to sampler steps.

    The SVG output is byte-identical for identical reports.
    """
    if not plot_params:
        plot_params['figsize'] = (6, 4.5)

    own_figure = ax is None
    if own_figure:
        f, ax = plt.subplots(1, 1, **plot_params)
    else:
        f = ax.figure

    xs = [r.wall_clock_s for r in reports]
    ys = [r.precision for r in reports]
    sizes = [base_marker * max(r.steps, 1) for r in reports]
    ax.scatter(xs, ys, s=sizes, color='royalblue', edgecolor='white',
               alpha=0.8)
    for r in reports:
        ax.annotate(r.run_id, (r.wall_clock_s, r.precision), fontsize=7,
                    xytext=(4, 4), textcoords='offset points')
    ax.set_xlabel('generation time, s')
    ax.set_ylabel('precision')
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)

    with matplotlib.rc_context({'svg.hashsalt': SVG_SALT,
                                'svg.fonttype': 'path'}):
        f.savefig(path, format='svg', metadata={'Date': None})
    if own_figure:
        plt.close(f)
    return ax
