/** Trailing-edge debounce used to coalesce slider drags into one request. */

export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  /** Run the pending call now instead of waiting out the delay. */
  flush(): void;
  /** Drop the pending call without running it. */
  cancel(): void;
  /** True while a call is scheduled but not yet delivered. */
  pending(): boolean;
}

/**
 * Returns a wrapper that delivers only the most recent call, `waitMs` after
 * the calls stop.  Each new call restarts the timer, so a continuous drag
 * produces a single delivery once the pointer rests.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): Debounced<A> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let lastArgs: A | null = null;

  const deliver = () => {
    timer = null;
    if (lastArgs !== null) {
      const args = lastArgs;
      lastArgs = null;
      fn(...args);
    }
  };

  const wrapped = (...args: A) => {
    lastArgs = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(deliver, waitMs);
  };
  wrapped.flush = () => {
    if (timer !== null) {
      clearTimeout(timer);
      deliver();
    }
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    lastArgs = null;
  };
  wrapped.pending = () => timer !== null;
  return wrapped;
}
